#ifndef SGG_DATA_IO_HPP
#define SGG_DATA_IO_HPP

#include "sgg/error.hpp"
#include "sgg/evaluation.hpp"
#include "sgg/graph.hpp"
#include "sgg/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

/**
 *  \file
 *  Line-delimited dataset files and DOT export.
 *
 *  A dataset file is UTF-8 text. Line 1 is a JSON header object:
 *
 *      {"format":"sgg-dataset","version":1,"feature_dim":D,
 *       "class_names":[...],"predicate_names":[...],
 *       "provenance":{"generator":..,"features":..,"seed":..,"config_hash":..},
 *       "num_samples":N}
 *
 *  followed by exactly N sample lines, each a JSON object with keys, in this
 *  order: image_id, width, height, proposals ([[x1,y1,x2,y2],...]),
 *  node_features ([[f...],...]), edge_features ([[s,o,[f...]],...]),
 *  gt_classes, gt_offsets ([[dx,dy,dw,dh],...]), gt_predicates
 *  ([[s,o,p],...]). Reals are written with 17 significant digits, so a save
 *  and load round trip is bit-exact.
 */

namespace sgg
{

constexpr const char* dataset_format = "sgg-dataset";
constexpr int dataset_version = 1;

struct provenance
{
    std::string generator = "external";
    std::string features = "precomputed";
    std::uint64_t seed = 0;
    std::string config_hash;

    friend bool operator==(const provenance&, const provenance&) = default;
};

struct dataset_file
{
    vocab_meta vocab;
    std::size_t feature_dim = 0;
    provenance origin;
    std::vector<scene_graph_sample> samples;

    friend bool operator==(const dataset_file&, const dataset_file&) = default;
};

/// Every sample validated against the header; feature dimension uniform.
inline void validate_dataset(const dataset_file& d)
{
    validate_vocab(d.vocab);
    for (const auto& s : d.samples) {
        validate_sample(s, d.vocab);
        if (s.feature_dim() != d.feature_dim) {
            throw validation_error("sample " + s.image_id + ": feature dimension " +
                                   std::to_string(s.feature_dim()) + ", header declares " +
                                   std::to_string(d.feature_dim));
        }
    }
}

namespace detail
{

inline void put_real(std::string& out, double x)
{
    if (x == 0.0 && std::signbit(x)) {
        out += "-0.0"; // "-0" would come back as integer zero
        return;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    out += buf;
}

inline void put_reals(std::string& out, const auto& xs)
{
    out += '[';
    bool first = true;
    for (double x : xs) {
        if (!first) out += ',';
        first = false;
        put_real(out, x);
    }
    out += ']';
}

inline void put_string(std::string& out, const std::string& s)
{
    out += nlohmann::json(s).dump();
}

inline std::string sample_line(const scene_graph_sample& s)
{
    std::string o = "{\"image_id\":";
    put_string(o, s.image_id);
    o += ",\"width\":";
    put_real(o, s.width);
    o += ",\"height\":";
    put_real(o, s.height);
    o += ",\"proposals\":[";
    for (std::size_t i = 0; i < s.proposals.size(); ++i) {
        if (i) o += ',';
        const auto& b = s.proposals[i];
        put_reals(o, std::array<double, 4>{b.x1, b.y1, b.x2, b.y2});
    }
    o += "],\"node_features\":[";
    for (std::size_t i = 0; i < s.node_features.size(); ++i) {
        if (i) o += ',';
        put_reals(o, s.node_features[i]);
    }
    o += "],\"edge_features\":[";
    bool first = true;
    for (const auto& [p, f] : s.edge_features) {
        if (!first) o += ',';
        first = false;
        o += '[' + std::to_string(p.first) + ',' + std::to_string(p.second) + ',';
        put_reals(o, f);
        o += ']';
    }
    o += "],\"gt_classes\":[";
    for (std::size_t i = 0; i < s.gt_classes.size(); ++i) {
        if (i) o += ',';
        o += std::to_string(s.gt_classes[i]);
    }
    o += "],\"gt_offsets\":[";
    for (std::size_t i = 0; i < s.gt_offsets.size(); ++i) {
        if (i) o += ',';
        put_reals(o, s.gt_offsets[i]);
    }
    o += "],\"gt_predicates\":[";
    first = true;
    for (const auto& [p, pred] : s.gt_predicates) {
        if (!first) o += ',';
        first = false;
        o += '[' + std::to_string(p.first) + ',' + std::to_string(p.second) + ',' + std::to_string(pred) + ']';
    }
    o += "]}";
    return o;
}

inline std::string header_line(const dataset_file& d)
{
    nlohmann::ordered_json h;
    h["format"] = dataset_format;
    h["version"] = dataset_version;
    h["feature_dim"] = d.feature_dim;
    h["class_names"] = d.vocab.class_names;
    h["predicate_names"] = d.vocab.predicate_names;
    h["provenance"] = {{"generator", d.origin.generator},
                       {"features", d.origin.features},
                       {"seed", d.origin.seed},
                       {"config_hash", d.origin.config_hash}};
    h["num_samples"] = d.samples.size();
    return h.dump();
}

inline box parse_box(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must have 4 coordinates");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline scene_graph_sample parse_sample(const nlohmann::json& j)
{
    scene_graph_sample s;
    s.image_id = j.at("image_id").get<std::string>();
    s.width = j.at("width").get<double>();
    s.height = j.at("height").get<double>();
    for (const auto& b : j.at("proposals")) s.proposals.push_back(parse_box(b));
    for (const auto& f : j.at("node_features")) s.node_features.push_back(f.get<std::vector<double>>());
    for (const auto& e : j.at("edge_features")) {
        if (!e.is_array() || e.size() != 3) throw std::invalid_argument("edge_features entry must be [s,o,[f]]");
        const node_pair p{e[0].get<std::size_t>(), e[1].get<std::size_t>()};
        if (!s.edge_features.emplace(p, e[2].get<std::vector<double>>()).second) {
            throw std::invalid_argument("duplicate edge_features entry " + pair_str(p));
        }
    }
    s.gt_classes = j.at("gt_classes").get<std::vector<std::size_t>>();
    for (const auto& t : j.at("gt_offsets")) {
        if (!t.is_array() || t.size() != 4) throw std::invalid_argument("gt_offsets row must have 4 values");
        s.gt_offsets.push_back({t[0].get<double>(), t[1].get<double>(), t[2].get<double>(), t[3].get<double>()});
    }
    for (const auto& r : j.at("gt_predicates")) {
        if (!r.is_array() || r.size() != 3) throw std::invalid_argument("gt_predicates entry must be [s,o,p]");
        const node_pair p{r[0].get<std::size_t>(), r[1].get<std::size_t>()};
        if (!s.gt_predicates.emplace(p, r[2].get<std::size_t>()).second) {
            throw std::invalid_argument("duplicate gt_predicates entry " + pair_str(p));
        }
    }
    return s;
}

} // namespace detail

/// Canonical serialization: byte-identical output for equal datasets.
inline std::string serialize_dataset(const dataset_file& d)
{
    std::string out = detail::header_line(d);
    out += '\n';
    for (const auto& s : d.samples) {
        out += detail::sample_line(s);
        out += '\n';
    }
    return out;
}

inline void save_dataset(const dataset_file& d, const std::string& path)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    const std::string text = serialize_dataset(d);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw io_error("write failed: " + path);
}

/// Parses and fully validates a dataset read from `in`.
inline dataset_file parse_dataset(std::istream& in)
{
    dataset_file d;
    std::string line;
    std::size_t lineno = 0;
    std::size_t expected = 0;
    if (!std::getline(in, line)) throw parse_error("missing header", 1);
    ++lineno;
    try {
        const auto h = nlohmann::json::parse(line);
        if (h.at("format").get<std::string>() != dataset_format) throw std::invalid_argument("not a dataset file");
        if (h.at("version").get<int>() != dataset_version) throw std::invalid_argument("unsupported version");
        d.feature_dim = h.at("feature_dim").get<std::size_t>();
        d.vocab.class_names = h.at("class_names").get<std::vector<std::string>>();
        d.vocab.predicate_names = h.at("predicate_names").get<std::vector<std::string>>();
        const auto& p = h.at("provenance");
        d.origin.generator = p.at("generator").get<std::string>();
        d.origin.features = p.at("features").get<std::string>();
        d.origin.seed = p.at("seed").get<std::uint64_t>();
        d.origin.config_hash = p.at("config_hash").get<std::string>();
        expected = h.at("num_samples").get<std::size_t>();
    } catch (const std::exception& e) {
        throw parse_error(std::string("bad header: ") + e.what(), lineno);
    }
    validate_vocab(d.vocab);

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        scene_graph_sample s;
        try {
            s = detail::parse_sample(nlohmann::json::parse(line));
        } catch (const std::exception& e) {
            throw parse_error(std::string("bad sample record: ") + e.what(), lineno);
        }
        validate_sample(s, d.vocab);
        if (s.feature_dim() != d.feature_dim) {
            throw validation_error("line " + std::to_string(lineno) + ": sample " + s.image_id +
                                   " has feature dimension " + std::to_string(s.feature_dim()) +
                                   ", header declares " + std::to_string(d.feature_dim));
        }
        d.samples.push_back(std::move(s));
    }
    if (d.samples.size() != expected) {
        throw parse_error("truncated file: header declares " + std::to_string(expected) +
                          " samples, found " + std::to_string(d.samples.size()), lineno + 1);
    }
    return d;
}

inline dataset_file load_dataset(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    return parse_dataset(f);
}

// ---------------------------------------------------------------------------
// DOT export

/**
 *  Scene graph as DOT text. Objects are box-shaped blue nodes, relations are
 *  red ellipse nodes linked subject -> relation -> object. Ground-truth
 *  elements carry source="gt"; with a prediction, predicted classes and the
 *  predicted predicate of every labeled pair are added with source="pred".
 */
inline std::string export_dot(const scene_graph_sample& s, const vocab_meta& vocab,
                              const prediction* pred = nullptr,
                              const std::vector<node_pair>* pred_edges = nullptr)
{
    auto cls_name = [&](std::size_t c) {
        return c < vocab.class_names.size() ? vocab.class_names[c] : std::to_string(c);
    };
    auto pred_name = [&](std::size_t p) {
        return p < vocab.predicate_names.size() ? vocab.predicate_names[p] : std::to_string(p);
    };
    auto quote = [](const std::string& x) { return nlohmann::json(x).dump(); };

    std::ostringstream os;
    os << "digraph scene_graph {\n";
    os << "  label=" << quote(s.image_id) << ";\n";
    for (std::size_t i = 0; i < s.num_nodes(); ++i) {
        os << "  obj" << i << " [shape=box, color=blue, source=\"gt\", label="
           << quote(std::to_string(i) + ":" + cls_name(s.gt_classes[i]));
        if (pred) {
            const std::size_t c = argmax_from(pred->class_probs[i].values(), 0);
            os << ", pred_label=" << quote(cls_name(c));
        }
        os << "];\n";
    }
    std::size_t r = 0;
    for (const auto& [pair, p] : s.gt_predicates) {
        if (p == 0) continue;
        os << "  rel" << r << " [shape=ellipse, color=red, source=\"gt\", label=" << quote(pred_name(p)) << "];\n";
        os << "  obj" << pair.first << " -> rel" << r << ";\n";
        os << "  rel" << r << " -> obj" << pair.second << ";\n";
        ++r;
    }
    if (pred && pred_edges) {
        std::size_t q = 0;
        for (std::size_t e = 0; e < pred_edges->size(); ++e) {
            const auto& pair = (*pred_edges)[e];
            if (s.predicate_of(pair) == 0) continue;
            const auto probs = pred->pred_probs[e].values();
            const std::size_t best = probs.size() > 1 ? argmax_from(probs, 1) : 0;
            os << "  pred" << q << " [shape=ellipse, color=red, style=dashed, source=\"pred\", label="
               << quote(pred_name(best)) << "];\n";
            os << "  obj" << pair.first << " -> pred" << q << " [style=dashed];\n";
            os << "  pred" << q << " -> obj" << pair.second << " [style=dashed];\n";
            ++q;
        }
    }
    os << "}\n";
    return os.str();
}

} // namespace sgg
#endif // header guard
