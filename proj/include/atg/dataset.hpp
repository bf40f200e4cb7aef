#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "atg/core.hpp"
#include "atg/envsim.hpp"
#include "atg/errors.hpp"
#include "atg/graph.hpp"
#include "atg/localizer.hpp"
#include "atg/otdist.hpp"
#include "atg/spatial_map.hpp"

namespace atg {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Small helpers.
// ---------------------------------------------------------------------------

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_text_file(const fs::path &path, const std::string &content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << content;
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_text_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline uint64_t fnv1a64(const std::string &data, uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Trace JSONL.
// ---------------------------------------------------------------------------

inline std::string trace_to_jsonl(const Trace &trace) {
    std::ostringstream os;
    for (const auto &s : trace.steps) os << step_to_json_line(s) << "\n";
    return os.str();
}

inline std::vector<RawStep> parse_trace_jsonl_text(const std::string &text) {
    std::vector<RawStep> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        RawStep s;
        s.src = j.at("src").get<int>();
        s.dst = j.at("dst").get<int>();
        s.action.role = role_from_name(j.at("action").at("role").get<std::string>());
        s.action.index = j.at("action").at("index").get<int>();
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spatial maps as flat CSV (single line, row-major).
// ---------------------------------------------------------------------------

inline std::string map_to_csv(const SpatialMap &m) {
    std::ostringstream os;
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        if (i) os << ",";
        os << fmt_double(m.values[i]);
    }
    os << "\n";
    return os.str();
}

inline SpatialMap map_from_csv(const std::string &text, int height, int width) {
    SpatialMap m = make_map(height, width);
    std::size_t idx = 0;
    const char *p = text.c_str();
    char *end = nullptr;
    while (*p && idx < m.values.size()) {
        m.values[idx++] = std::strtod(p, &end);
        p = end;
        while (*p == ',' || *p == '\n' || *p == '\r' || *p == ' ') ++p;
    }
    if (idx != m.values.size()) {
        throw IoError("map CSV holds " + std::to_string(idx) + " values, expected " +
                      std::to_string(m.values.size()));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Dataset directory: trace.jsonl + maps/ + manifest.json.
// ---------------------------------------------------------------------------

inline std::string map_file_name(int obs) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "obs_%04d.csv", obs);
    return buf;
}

inline void write_dataset(const fs::path &dir, const EnvSpec &spec, const GroundTruthEnv &env,
                          const SampledDataset &data) {
    fs::create_directories(dir / "maps");
    write_text_file(dir / "trace.jsonl", trace_to_jsonl(data.trace));
    for (int i = 0; i < data.trace.n_observations(); ++i) {
        write_text_file(dir / "maps" / map_file_name(i), map_to_csv(data.maps[i]));
    }
    json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["env"] = {{"kind", env_kind_name(spec.kind)},
                       {"height", spec.height},
                       {"width", spec.width},
                       {"seed", spec.seed}};
    manifest["n_classes"] = env.n_classes;
    manifest["n_actions"] = static_cast<int>(env.actions.size());
    json obs = json::array();
    for (int i = 0; i < data.trace.n_observations(); ++i) {
        obs.push_back({{"id", i},
                       {"role", role_name(data.trace.roles[i])},
                       {"state", data.state_of_obs[i]},
                       {"class", data.class_of_obs[i]},
                       {"render_seed", data.render_seeds[i]},
                       {"map", "maps/" + map_file_name(i)}});
    }
    manifest["observations"] = std::move(obs);
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct LoadedDataset {
    EnvSpec spec;
    GroundTruthEnv env;
    Trace trace;
    std::vector<SpatialMap> maps;
    std::vector<int> state_of_obs;
    std::vector<int> class_of_obs;
    int n_classes = 0;
};

inline LoadedDataset load_dataset(const fs::path &dir) {
    LoadedDataset out;
    const json manifest = json::parse(read_text_file(dir / "manifest.json"));
    out.spec.kind = env_kind_from_name(manifest.at("env").at("kind").get<std::string>());
    out.spec.height = manifest.at("env").at("height").get<int>();
    out.spec.width = manifest.at("env").at("width").get<int>();
    out.spec.seed = manifest.at("env").at("seed").get<uint64_t>();
    out.env = build_env(out.spec);
    out.n_classes = manifest.at("n_classes").get<int>();
    out.trace = assign_roles(parse_trace_jsonl_text(read_text_file(dir / "trace.jsonl")));
    const auto &obs = manifest.at("observations");
    out.maps.resize(obs.size());
    out.state_of_obs.resize(obs.size());
    out.class_of_obs.resize(obs.size());
    for (const auto &o : obs) {
        const int id = o.at("id").get<int>();
        out.state_of_obs.at(id) = o.at("state").get<int>();
        out.class_of_obs.at(id) = o.at("class").get<int>();
        out.maps.at(id) =
            map_from_csv(read_text_file(dir / o.at("map").get<std::string>()), out.spec.height, out.spec.width);
    }
    if (static_cast<int>(out.maps.size()) != out.trace.n_observations()) {
        throw IoError("manifest observation count does not match trace");
    }
    return out;
}

// Content hash used to key the distance cache.
inline uint64_t dataset_hash(const fs::path &dir) {
    uint64_t h = fnv1a64(read_text_file(dir / "trace.jsonl"));
    const json manifest = json::parse(read_text_file(dir / "manifest.json"));
    for (const auto &o : manifest.at("observations")) {
        h = fnv1a64(read_text_file(dir / o.at("map").get<std::string>()), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Distance matrix CSV + cache metadata.
// ---------------------------------------------------------------------------

inline std::string distance_matrix_to_csv(const DistanceMatrix &m) {
    std::ostringstream os;
    for (int i = 0; i < m.size(); ++i) os << (i ? "," : "") << m.ids[i];
    os << "\n";
    for (int i = 0; i < m.size(); ++i) {
        for (int j = 0; j < m.size(); ++j) os << (j ? "," : "") << fmt_double(m.at(i, j));
        os << "\n";
    }
    return os.str();
}

inline DistanceMatrix distance_matrix_from_csv(const std::string &text) {
    DistanceMatrix m;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("distance csv: missing header");
    {
        std::istringstream hs(line);
        std::string tok;
        while (std::getline(hs, tok, ',')) m.ids.push_back(std::stoi(tok));
    }
    const int n = m.size();
    m.values.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw IoError("distance csv: truncated");
        std::istringstream rs(line);
        std::string tok;
        for (int j = 0; j < n; ++j) {
            if (!std::getline(rs, tok, ',')) throw IoError("distance csv: short row");
            m.at(i, j) = std::stod(tok);
        }
    }
    m.build_index();
    return m;
}

inline json ot_params_to_json(const OTParams &p) {
    return {{"epsilon", p.epsilon}, {"max_iters", p.max_iters}, {"tol", p.tol}, {"downsample", p.downsample}};
}

// ---------------------------------------------------------------------------
// Partition / graph / classifier JSON.
// ---------------------------------------------------------------------------

inline json partition_to_json(const Partition &p) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["k_pick"] = p.k_pick;
    j["k_place"] = p.k_place;
    json pick = json::array(), place = json::array();
    for (const auto &[obs, c] : p.pick_assign) pick.push_back({obs, c});
    for (const auto &[obs, c] : p.place_assign) place.push_back({obs, c});
    j["pick_assign"] = std::move(pick);
    j["place_assign"] = std::move(place);
    return j;
}

inline Partition partition_from_json(const json &j) {
    Partition p;
    p.k_pick = j.at("k_pick").get<int>();
    p.k_place = j.at("k_place").get<int>();
    for (const auto &e : j.at("pick_assign")) p.pick_assign[e.at(0).get<int>()] = e.at(1).get<int>();
    for (const auto &e : j.at("place_assign")) p.place_assign[e.at(0).get<int>()] = e.at(1).get<int>();
    return p;
}

inline json graph_to_json(const AbstractGraph &g) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["k_pick"] = g.k_pick;
    j["k_place"] = g.k_place;
    json edges = json::array();
    for (const auto &e : g.edges) {
        edges.push_back({{"src_role", role_name(e.src.role)},
                         {"src", e.src.cluster},
                         {"action", {{"role", role_name(e.action.role)}, {"index", e.action.index}}},
                         {"dst_role", role_name(e.dst.role)},
                         {"dst", e.dst.cluster}});
    }
    j["edges"] = std::move(edges);
    return j;
}

inline AbstractGraph graph_from_json(const json &j) {
    AbstractGraph g;
    g.k_pick = j.at("k_pick").get<int>();
    g.k_place = j.at("k_place").get<int>();
    for (const auto &e : j.at("edges")) {
        AbstractGraph::Edge edge;
        edge.src = {role_from_name(e.at("src_role").get<std::string>()), e.at("src").get<int>()};
        edge.dst = {role_from_name(e.at("dst_role").get<std::string>()), e.at("dst").get<int>()};
        edge.action.role = role_from_name(e.at("action").at("role").get<std::string>());
        edge.action.index = e.at("action").at("index").get<int>();
        g.edges.push_back(edge);
    }
    return g;
}

inline json classifier_to_json(const PrototypeClassifier &c, uint64_t provenance_hash) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["k_pick"] = c.k_pick;
    j["k_place"] = c.k_place;
    j["gamma"] = c.gamma;
    j["feature_side"] = c.feature_side;
    j["partition_hash"] = provenance_hash;
    j["prototypes"] = c.prototypes;
    return j;
}

inline PrototypeClassifier classifier_from_json(const json &j) {
    PrototypeClassifier c;
    c.k_pick = j.at("k_pick").get<int>();
    c.k_place = j.at("k_place").get<int>();
    c.gamma = j.at("gamma").get<double>();
    c.feature_side = j.at("feature_side").get<int>();
    c.prototypes = j.at("prototypes").get<std::vector<std::vector<double>>>();
    return c;
}

// Metrics CSV row in Table-I column order.
inline std::string metrics_csv_header() { return "method,opt_path_pct,any_path_pct,transition_pct,v_score\n"; }

inline std::string metrics_csv_row(const std::string &method, const Metrics &m) {
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f,%.2f,%.6f", method.c_str(), m.opt_path_pct, m.any_path_pct,
                  m.transition_pct, m.v_score);
    os << buf << "\n";
    return os.str();
}

}  // namespace atg
