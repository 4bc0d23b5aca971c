#pragma once
// Antibody-antigen complex data model and the JSON Lines interchange format.
//
// On-disk schema, one object per line:
//   {"id": str,
//    "heavy":   {"seq": str, "atoms": [[[x,y,z] x4] per residue]},
//    "light":   {...} | null,
//    "antigen": {...},
//    "epitope": [int],                       // 0-based antigen indices
//    "cdr_spans": {"H3": [start, end], ...}} // half-open heavy-chain ranges
// Coordinates are Angstrom float64. Atom row order is N, CA, C, O.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "abloop/amino.hpp"
#include "abloop/common.hpp"

namespace abloop {

inline constexpr int kAtomsPerResidue = 4;
enum Atom { kN = 0, kCA = 1, kC = 2, kO = 3 };

struct Residue {
    int aa = 0;                       // index into kAlphabet
    Eigen::Matrix<double, 4, 3> atoms;  // rows N, CA, C, O

    Vec3 ca() const { return atoms.row(kCA).transpose(); }
};

using Chain = std::vector<Residue>;

struct CdrSpan {
    std::string name;  // H1, H2, H3
    int start = 0;     // half-open [start, end) into the heavy chain
    int end = 0;
    int length() const { return end - start; }
};

struct Complex {
    std::string id;
    Chain heavy;
    Chain light;  // may be empty
    Chain antigen;
    std::vector<int> epitope;       // indices into antigen
    std::vector<CdrSpan> cdr_spans;  // sorted by start

    // Heavy positions not covered by any CDR span.
    std::vector<int> framework_positions() const {
        std::vector<bool> in_cdr(heavy.size(), false);
        for (const CdrSpan& s : cdr_spans)
            for (int i = s.start; i < s.end; ++i) in_cdr[size_t(i)] = true;
        std::vector<int> fw;
        for (size_t i = 0; i < heavy.size(); ++i)
            if (!in_cdr[i]) fw.push_back(int(i));
        return fw;
    }

    std::vector<int> cdr_positions() const {
        std::vector<int> idx;
        for (const CdrSpan& s : cdr_spans)
            for (int i = s.start; i < s.end; ++i) idx.push_back(i);
        return idx;
    }

    std::string cdr_sequence() const {
        std::string s;
        for (int i : cdr_positions()) s += aa_letter(heavy[size_t(i)].aa);
        return s;
    }

    void validate() const {
        auto check_chain = [&](const Chain& c, const char* tag) {
            for (const Residue& r : c) {
                check(r.aa >= 0 && r.aa < kNumAA,
                      "complex " + id + ": " + tag + " amino acid index out of range");
                check(r.atoms.allFinite(), "complex " + id + ": " + tag + " has non-finite coordinates");
            }
        };
        check_chain(heavy, "heavy");
        check_chain(light, "light");
        check_chain(antigen, "antigen");
        for (int e : epitope)
            check(e >= 0 && e < int(antigen.size()),
                  "complex " + id + ": epitope index " + std::to_string(e) + " out of range");
        int prev_end = -1;
        for (const CdrSpan& s : cdr_spans) {
            check(s.start >= 0 && s.end <= int(heavy.size()) && s.start < s.end,
                  "complex " + id + ": cdr span " + s.name + " out of bounds or empty");
            check(s.start >= prev_end, "complex " + id + ": cdr spans overlap at " + s.name);
            prev_end = s.end;
        }
    }
};

struct ContactSet {
    std::set<std::pair<int, int>> pairs;  // (cdr_index, antigen_index)
    double cutoff = 8.0;
};

inline constexpr double kContactCutoff = 8.0;  // Angstrom, used everywhere a d_c is needed

// Pairs (k, j) with strict Euclidean CA distance < cutoff.
inline ContactSet contacts(const Mat& cdr_ca, const Mat& antigen_ca, double cutoff = kContactCutoff) {
    check(cutoff > 0, "contacts: cutoff must be positive");
    check(cdr_ca.cols() == 3 && antigen_ca.cols() == 3, "contacts: coordinates must be n x 3");
    ContactSet cs;
    cs.cutoff = cutoff;
    for (Eigen::Index k = 0; k < cdr_ca.rows(); ++k)
        for (Eigen::Index j = 0; j < antigen_ca.rows(); ++j)
            if ((cdr_ca.row(k) - antigen_ca.row(j)).norm() < cutoff)
                cs.pairs.insert({int(k), int(j)});
    return cs;
}

inline Mat chain_ca(const Chain& c) {
    Mat m(Eigen::Index(c.size()), 3);
    for (size_t i = 0; i < c.size(); ++i) m.row(Eigen::Index(i)) = c[i].atoms.row(kCA);
    return m;
}

// Packs a chain as n x 12 (atom-major N,CA,C,O).
inline Mat chain_atoms_packed(const Chain& c) {
    Mat m(Eigen::Index(c.size()), 12);
    for (size_t i = 0; i < c.size(); ++i)
        for (int a = 0; a < 4; ++a) m.row(Eigen::Index(i)).segment<3>(3 * a) = c[i].atoms.row(a);
    return m;
}

// ---- JSONL ------------------------------------------------------------------

namespace detail {

inline nlohmann::json chain_to_json(const Chain& c) {
    std::string seq;
    nlohmann::json atoms = nlohmann::json::array();
    for (const Residue& r : c) {
        seq += aa_letter(r.aa);
        nlohmann::json res = nlohmann::json::array();
        for (int a = 0; a < 4; ++a)
            res.push_back({r.atoms(a, 0), r.atoms(a, 1), r.atoms(a, 2)});
        atoms.push_back(res);
    }
    return {{"seq", seq}, {"atoms", atoms}};
}

inline Chain chain_from_json(const nlohmann::json& j, const std::string& id, const char* tag) {
    const std::string seq = j.at("seq").get<std::string>();
    const auto& atoms = j.at("atoms");
    check(atoms.size() == seq.size(),
          "complex " + id + ": " + tag + " seq/atoms length mismatch");
    Chain c(seq.size());
    for (size_t i = 0; i < seq.size(); ++i) {
        c[i].aa = aa_index(seq[i]);
        const auto& res = atoms.at(i);
        check(res.size() == 4, "complex " + id + ": " + tag + " residue must have 4 atoms");
        for (int a = 0; a < 4; ++a)
            for (int d = 0; d < 3; ++d) c[i].atoms(a, d) = res.at(size_t(a)).at(size_t(d)).get<double>();
    }
    return c;
}

}  // namespace detail

inline nlohmann::json complex_to_json(const Complex& cx) {
    nlohmann::json j;
    j["id"] = cx.id;
    j["heavy"] = detail::chain_to_json(cx.heavy);
    j["light"] = cx.light.empty() ? nlohmann::json(nullptr) : detail::chain_to_json(cx.light);
    j["antigen"] = detail::chain_to_json(cx.antigen);
    j["epitope"] = cx.epitope;
    nlohmann::json spans = nlohmann::json::object();
    for (const CdrSpan& s : cx.cdr_spans) spans[s.name] = {s.start, s.end};
    j["cdr_spans"] = spans;
    return j;
}

inline Complex complex_from_json(const nlohmann::json& j) {
    Complex cx;
    cx.id = j.at("id").get<std::string>();
    cx.heavy = detail::chain_from_json(j.at("heavy"), cx.id, "heavy");
    if (!j.at("light").is_null()) cx.light = detail::chain_from_json(j.at("light"), cx.id, "light");
    cx.antigen = detail::chain_from_json(j.at("antigen"), cx.id, "antigen");
    cx.epitope = j.at("epitope").get<std::vector<int>>();
    for (const auto& [name, range] : j.at("cdr_spans").items()) {
        CdrSpan s;
        s.name = name;
        s.start = range.at(0).get<int>();
        s.end = range.at(1).get<int>();
        cx.cdr_spans.push_back(s);
    }
    std::sort(cx.cdr_spans.begin(), cx.cdr_spans.end(),
              [](const CdrSpan& a, const CdrSpan& b) { return a.start < b.start; });
    cx.validate();
    return cx;
}

inline std::vector<Complex> load_complexes(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "cannot open " + path);
    std::vector<Complex> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(path + ":" + std::to_string(lineno) + ": parse error: " + e.what());
        }
        try {
            out.push_back(complex_from_json(j));
        } catch (const nlohmann::json::exception& e) {
            fail(path + ":" + std::to_string(lineno) + ": bad complex record: " + e.what());
        }
    }
    return out;
}

inline void save_complexes(const std::string& path, const std::vector<Complex>& cs) {
    std::ofstream out(path);
    check(out.good(), "cannot write " + path);
    for (const Complex& c : cs) out << complex_to_json(c).dump() << "\n";
}

}  // namespace abloop
