// Batch front end: generate | learn | evaluate | plan | localize.
//
// Exit codes: 0 success, 1 runtime/IO error, 2 usage error,
// 3 no feasible sweep cell, 4 no path.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atg/baselines.hpp"
#include "atg/dataset.hpp"
#include "atg/envsim.hpp"
#include "atg/graph.hpp"
#include "atg/learn.hpp"
#include "atg/localizer.hpp"
#include "atg/otdist.hpp"
#include "atg/sweep.hpp"

namespace fs = std::filesystem;
using atg::json;

namespace {

struct GlobalOpts {
    uint64_t seed = 0;
    int threads = 0;  // 0: hardware concurrency
};

int default_n_obs(atg::EnvKind kind) {
    switch (kind) {
        case atg::EnvKind::FruitHom:
        case atg::EnvKind::FruitHet: return 30;
        case atg::EnvKind::Blocks2: return 45;
        case atg::EnvKind::Blocks3: return 150;
    }
    return 30;
}

int cmd_generate(const GlobalOpts &g, const std::string &env_name, int n_obs, int grid, const fs::path &out) {
    atg::EnvSpec spec;
    spec.kind = atg::env_kind_from_name(env_name);
    spec.height = spec.width = grid;
    spec.seed = g.seed;
    const atg::GroundTruthEnv env = atg::build_env(spec);
    if (n_obs <= 0) n_obs = default_n_obs(spec.kind);
    const atg::SampledDataset data = atg::sample_trace(env, n_obs, spec.seed);
    atg::write_dataset(out, spec, env, data);
    std::cout << "dataset: " << out.string() << "  observations: " << n_obs << "  classes: " << env.n_classes
              << "\n";
    return 0;
}

struct LearnConfig {
    int k_min = 0, k_max = 0;
    std::vector<int> caps;
    double tau = 0.0;      // 0: median heuristic
    double epsilon = 0.0;  // 0: 0.05 * grid diagonal
    int downsample = 32;
    long long budget = 1000000;
    int rounds = 6;
    bool explain = false;
};

atg::DistanceMatrix distances_with_cache(const fs::path &data_dir, const fs::path &bundle_dir,
                                         const atg::LoadedDataset &ds, const atg::OTParams &params,
                                         int threads) {
    const uint64_t dhash = atg::dataset_hash(data_dir);
    const fs::path csv = bundle_dir / "distances.csv";
    const fs::path meta = bundle_dir / "distances_meta.json";
    if (fs::exists(csv) && fs::exists(meta)) {
        const json m = json::parse(atg::read_text_file(meta));
        if (m.value("dataset_hash", uint64_t{0}) == dhash &&
            m.value("params", json{}) == atg::ot_params_to_json(params)) {
            return atg::distance_matrix_from_csv(atg::read_text_file(csv));
        }
    }
    std::vector<int> ids(ds.maps.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    const atg::DistanceMatrixResult res = atg::distance_matrix(ds.maps, ids, params, threads);
    for (const auto &[a, b] : res.nonconverged) {
        std::cerr << "warning: sinkhorn did not converge for pair (" << a << ", " << b << ")\n";
    }
    atg::write_text_file(csv, atg::distance_matrix_to_csv(res.matrix));
    json m;
    m["dataset_hash"] = dhash;
    m["params"] = atg::ot_params_to_json(params);
    atg::write_text_file(meta, m.dump(2) + "\n");
    return res.matrix;
}

int cmd_learn(const GlobalOpts &g, const fs::path &data_dir, const fs::path &out_dir, LearnConfig cfg) {
    const atg::LoadedDataset ds = atg::load_dataset(data_dir);
    fs::create_directories(out_dir);

    atg::OTParams params;
    params.epsilon = cfg.epsilon;
    params.downsample = cfg.downsample;
    const atg::DistanceMatrix d = distances_with_cache(data_dir, out_dir, ds, params, g.threads);
    const double tau = cfg.tau > 0.0 ? cfg.tau : atg::median_off_diagonal(d);

    const int idx = atg::action_indices_per_role(ds.trace);
    const int k_min = cfg.k_min > 0 ? cfg.k_min : 2;
    const int k_max = cfg.k_max > 0 ? cfg.k_max : idx + 1;
    std::vector<std::pair<int, int>> grid;
    for (int kp = k_min; kp <= k_max; ++kp) {
        for (int kq = k_min; kq <= k_max; ++kq) grid.emplace_back(kp, kq);
    }
    const std::vector<int> caps = cfg.caps.empty() ? atg::default_caps() : cfg.caps;

    atg::LearnOptions lopts;
    lopts.refine_rounds = cfg.rounds;
    lopts.limits.node_budget = cfg.budget;
    const atg::SweepResult sweep = atg::sweep_grid(ds.trace, d, grid, caps, tau, lopts, g.threads);

    atg::Selection sel;
    try {
        sel = atg::select_best(sweep);
    } catch (const atg::NoFeasibleCell &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }

    // Re-run the selected cell with logging on to emit the search log.
    atg::SearchLog log;
    log.enabled = true;
    atg::LearnOptions log_opts = lopts;
    log_opts.log = &log;
    const atg::LearnResult selected_run =
        atg::learn_partition(ds.trace, d, sel.cell.k_pick, sel.cell.k_place, sel.cell.k_cap, tau, log_opts);
    if (selected_run.status != atg::SearchStatus::Solved ||
        !atg::partition_equal_up_to_relabel(selected_run.partition, sel.partition)) {
        std::cerr << "error: selected-cell rerun diverged from sweep result\n";
        return 1;
    }

    const atg::AbstractGraph graph = atg::induce_graph_strict(sel.partition, ds.trace, sel.cell.k_cap);
    const atg::PrototypeClassifier clf = atg::fit_prototypes(ds.maps, sel.partition);

    const json pj = atg::partition_to_json(sel.partition);
    atg::write_text_file(out_dir / "partition.json", pj.dump(2) + "\n");
    atg::write_text_file(out_dir / "graph.json", atg::graph_to_json(graph).dump(2) + "\n");
    atg::write_text_file(out_dir / "graph.dot", atg::to_dot(graph, &sel.partition));
    atg::write_text_file(out_dir / "sweep.csv", atg::sweep_matrix_csv(sweep));
    atg::write_text_file(out_dir / "sweep_cells.csv", atg::sweep_cells_csv(sweep));
    atg::write_text_file(out_dir / "localizer.json",
                         atg::classifier_to_json(clf, atg::fnv1a64(pj.dump())).dump(2) + "\n");
    {
        std::string lines;
        for (const auto &l : log.lines) lines += l + "\n";
        if (log.dropped > 0) {
            lines += "{\"event\": \"truncated\", \"dropped\": " + std::to_string(log.dropped) + "}\n";
        }
        atg::write_text_file(out_dir / "search_log.jsonl", lines);
        if (cfg.explain) std::cout << lines;
    }
    json manifest;
    manifest["schema_version"] = atg::kSchemaVersion;
    manifest["dataset_hash"] = atg::dataset_hash(data_dir);
    manifest["grid_height"] = ds.spec.height;
    manifest["grid_width"] = ds.spec.width;
    manifest["env_kind"] = atg::env_kind_name(ds.spec.kind);
    manifest["selected"] = {{"k_pick", sel.cell.k_pick},
                            {"k_place", sel.cell.k_place},
                            {"k_cap", sel.cell.k_cap},
                            {"score", sel.score}};
    manifest["config"] = {{"seed", g.seed},
                          {"k_min", k_min},
                          {"k_max", k_max},
                          {"caps", caps},
                          {"tau", tau},
                          {"ot", atg::ot_params_to_json(params)},
                          {"budget", cfg.budget},
                          {"rounds", cfg.rounds}};
    atg::write_text_file(out_dir / "learn_manifest.json", manifest.dump(2) + "\n");

    std::cout << "selected cell: (" << sel.cell.k_pick << ", " << sel.cell.k_place << ") cap " << sel.cell.k_cap
              << "  score " << sel.score << "\n";
    return 0;
}

int cmd_evaluate(const GlobalOpts &g, const fs::path &bundle, const fs::path &data_dir, int n_pairs,
                 const std::vector<std::string> &baselines, std::optional<fs::path> out_file) {
    const atg::LoadedDataset ds = atg::load_dataset(data_dir);
    const atg::Partition partition =
        atg::partition_from_json(json::parse(atg::read_text_file(bundle / "partition.json")));
    const atg::AbstractGraph graph =
        atg::graph_from_json(json::parse(atg::read_text_file(bundle / "graph.json")));
    const atg::DistanceMatrix d = atg::distance_matrix_from_csv(atg::read_text_file(bundle / "distances.csv"));

    std::string csv = atg::metrics_csv_header();
    {
        const atg::ClusterGrounding grounding = atg::dataset_grounding(partition, ds.trace, ds.state_of_obs);
        const atg::Metrics m =
            atg::evaluate(graph, ds.env, grounding, n_pairs, g.seed, atg::intra_cluster_score(partition, d));
        csv += atg::metrics_csv_row("ours", m);
    }
    auto partition_silhouette = [&](const atg::Partition &p) {
        return atg::silhouette(ds.trace.ids_with_role(atg::Role::Pick), p.pick_assign, p.k_pick, d) +
               atg::silhouette(ds.trace.ids_with_role(atg::Role::Place), p.place_assign, p.k_place, d);
    };
    for (const std::string &name : baselines) {
        atg::BaselineParams bp;
        if (name == "agglomerative") {
            bp.method = atg::BaselineMethod::Agglomerative;
            bp.k_pick = partition.k_pick;
            bp.k_place = partition.k_place;
            double best = -3.0;
            for (atg::Linkage l : {atg::Linkage::Average, atg::Linkage::Complete, atg::Linkage::Single}) {
                atg::BaselineParams trial = bp;
                trial.linkage = l;
                const double s = partition_silhouette(atg::baseline_pipeline(ds.trace, d, trial).partition);
                if (s > best) {
                    best = s;
                    bp.linkage = l;
                }
            }
        } else if (name == "density") {
            bp.method = atg::BaselineMethod::Density;
            double best = -3.0;
            bool any = false;
            for (int mcs : {2, 3}) {
                for (int ms : {1, 2}) {
                    atg::BaselineParams trial = bp;
                    trial.min_cluster_size = mcs;
                    trial.min_samples = ms;
                    try {
                        const double s = partition_silhouette(atg::baseline_pipeline(ds.trace, d, trial).partition);
                        if (s > best) {
                            best = s;
                            bp.min_cluster_size = mcs;
                            bp.min_samples = ms;
                            any = true;
                        }
                    } catch (const atg::DegenerateClustering &) {
                        continue;
                    }
                }
            }
            if (!any) {
                std::cerr << "warning: density baseline degenerate on every setting\n";
                continue;
            }
        } else {
            std::cerr << "error: unknown baseline '" << name << "'\n";
            return 2;
        }
        const atg::BaselineOutput o = atg::baseline_pipeline(ds.trace, d, bp);
        const atg::ClusterGrounding grounding = atg::dataset_grounding(o.partition, ds.trace, ds.state_of_obs);
        const atg::Metrics m = atg::evaluate(o.induced.graph, ds.env, grounding, n_pairs, g.seed,
                                             atg::intra_cluster_score(o.partition, d));
        csv += atg::metrics_csv_row(name, m);
    }
    const fs::path out = out_file.value_or(bundle / "metrics.csv");
    atg::write_text_file(out, csv);
    std::cout << csv;
    return 0;
}

int cmd_localize(const fs::path &bundle, const fs::path &map_file) {
    const json lm = json::parse(atg::read_text_file(bundle / "learn_manifest.json"));
    const atg::PrototypeClassifier clf =
        atg::classifier_from_json(json::parse(atg::read_text_file(bundle / "localizer.json")));
    const atg::SpatialMap m = atg::map_from_csv(atg::read_text_file(map_file), lm.at("grid_height").get<int>(),
                                                lm.at("grid_width").get<int>());
    atg::check_distribution(m, "input map");
    const atg::Classification c = atg::classify(clf, m);
    const atg::NodeKey node = clf.node_of_class(c.class_index);
    json j;
    j["class_index"] = c.class_index;
    j["node"] = {{"role", atg::role_name(node.role)}, {"cluster", node.cluster}};
    j["logits"] = c.logits;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_plan(const fs::path &bundle, const fs::path &start_file, const fs::path &goal_file,
             std::optional<fs::path> out_file) {
    const json lm = json::parse(atg::read_text_file(bundle / "learn_manifest.json"));
    const int h = lm.at("grid_height").get<int>();
    const int w = lm.at("grid_width").get<int>();
    const atg::PrototypeClassifier clf =
        atg::classifier_from_json(json::parse(atg::read_text_file(bundle / "localizer.json")));
    const atg::AbstractGraph graph =
        atg::graph_from_json(json::parse(atg::read_text_file(bundle / "graph.json")));

    auto classify_file = [&](const fs::path &p) {
        const atg::SpatialMap m = atg::map_from_csv(atg::read_text_file(p), h, w);
        atg::check_distribution(m, p.string());
        return clf.node_of_class(atg::classify(clf, m).class_index);
    };
    const atg::NodeKey start = classify_file(start_file);
    const atg::NodeKey goal = classify_file(goal_file);

    std::vector<atg::ActionLabel> plan;
    bool fallback = false;
    const auto shortest = atg::plan_bfs(graph, start, goal);
    if (!shortest.empty()) {
        plan = shortest.front();
    } else {
        const auto alt = atg::plan_dfs(graph, start, goal, 4 * (graph.k_pick + graph.k_place));
        if (!alt) {
            std::cerr << "error: no path from " << atg::role_name(start.role) << "_" << start.cluster << " to "
                      << atg::role_name(goal.role) << "_" << goal.cluster << "\n";
            return 4;
        }
        plan = *alt;
        fallback = true;
    }
    json j;
    j["start"] = {{"role", atg::role_name(start.role)}, {"cluster", start.cluster}};
    j["goal"] = {{"role", atg::role_name(goal.role)}, {"cluster", goal.cluster}};
    j["dfs_fallback"] = fallback;
    json actions = json::array();
    for (const auto &a : plan) actions.push_back({{"role", atg::role_name(a.role)}, {"index", a.index}});
    j["actions"] = std::move(actions);
    const std::string text = j.dump(2) + "\n";
    if (out_file) atg::write_text_file(*out_file, text);
    std::cout << text;
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Learns action-labeled abstract transition graphs from rearrangement traces"};
    app.require_subcommand(1);
    app.set_config("--config");

    GlobalOpts g;
    app.add_option("--seed", g.seed, "Seed for all randomized steps")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads (0 = auto)")->capture_default_str();

    auto *gen = app.add_subcommand("generate", "Sample a dataset from a synthetic environment");
    std::string env_name = "fruit_hom";
    int n_obs = 0, grid = 64;
    std::string gen_out;
    gen->add_option("--env", env_name, "fruit_hom | fruit_het | blocks2 | blocks3")->capture_default_str();
    gen->add_option("--n-obs", n_obs, "Observation count (0 = per-environment default)");
    gen->add_option("--grid", grid, "Grid side length")->capture_default_str();
    gen->add_option("--out", gen_out, "Output dataset directory")->required();

    auto *lrn = app.add_subcommand("learn", "Learn the abstraction from a dataset");
    std::string learn_data, learn_out;
    LearnConfig cfg;
    std::vector<int> caps_opt;
    lrn->add_option("--data", learn_data, "Dataset directory")->required();
    lrn->add_option("--out", learn_out, "Output bundle directory")->required();
    lrn->add_option("--k-min", cfg.k_min, "Smallest cluster count per side (0 = default 2)");
    lrn->add_option("--k-max", cfg.k_max, "Largest cluster count per side (0 = actions per role + 1)");
    lrn->add_option("--caps", caps_opt, "Out-degree cap sweep values")->delimiter(',');
    lrn->add_option("--tau", cfg.tau, "Affinity temperature (0 = median off-diagonal distance)");
    lrn->add_option("--epsilon", cfg.epsilon, "Sinkhorn regularization (0 = 0.05 x grid diagonal)");
    lrn->add_option("--downsample", cfg.downsample, "OT downsampling target side")->capture_default_str();
    lrn->add_option("--budget", cfg.budget, "Backtracking node budget per search")->capture_default_str();
    lrn->add_option("--rounds", cfg.rounds, "Refinement rounds")->capture_default_str();
    lrn->add_flag("--explain", cfg.explain, "Print the selected cell's search log");

    auto *ev = app.add_subcommand("evaluate", "Planning metrics against ground truth");
    std::string ev_bundle, ev_data, ev_out;
    int pairs = 500;
    std::vector<std::string> baselines;
    ev->add_option("--bundle", ev_bundle, "Learned bundle directory")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--pairs", pairs, "Start-goal pairs to sample")->capture_default_str();
    ev->add_option("--baselines", baselines, "Baselines to add: agglomerative, density")->delimiter(',');
    ev->add_option("--out", ev_out, "Metrics CSV path (default: bundle/metrics.csv)");

    auto *pl = app.add_subcommand("plan", "Plan between two observation maps");
    std::string plan_bundle, start_file, goal_file, plan_out;
    pl->add_option("--bundle", plan_bundle, "Learned bundle directory")->required();
    pl->add_option("--start", start_file, "Start map CSV")->required();
    pl->add_option("--goal", goal_file, "Goal map CSV")->required();
    pl->add_option("--out", plan_out, "Plan JSON output path");

    auto *loc = app.add_subcommand("localize", "Map an observation to a graph node");
    std::string loc_bundle, loc_map;
    loc->add_option("--bundle", loc_bundle, "Learned bundle directory")->required();
    loc->add_option("--map", loc_map, "Map CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_generate(g, env_name, n_obs, grid, gen_out);
        if (lrn->parsed()) {
            cfg.caps = caps_opt;
            return cmd_learn(g, learn_data, learn_out, cfg);
        }
        if (ev->parsed()) {
            std::optional<fs::path> out;
            if (!ev_out.empty()) out = ev_out;
            return cmd_evaluate(g, ev_bundle, ev_data, pairs, baselines, out);
        }
        if (pl->parsed()) {
            std::optional<fs::path> out;
            if (!plan_out.empty()) out = plan_out;
            return cmd_plan(plan_bundle, start_file, goal_file, out);
        }
        if (loc->parsed()) return cmd_localize(loc_bundle, loc_map);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
