// partseg command-line tool.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "partseg/annotation.hpp"
#include "partseg/consistency.hpp"
#include "partseg/error.hpp"
#include "partseg/geometry.hpp"
#include "partseg/infer.hpp"
#include "partseg/kernels.hpp"
#include "partseg/metrics.hpp"
#include "partseg/nnet.hpp"
#include "partseg/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace partseg;

namespace {

// Dataset layout: template.json, split.json, clouds/<id>.pnpc, annotations/<id>.json.
struct Dataset {
    fs::path root;
    Template tmpl;
    DatasetSplit split;

    const std::vector<std::string>& ids(const std::string& name) const {
        if (name == "train") return split.train;
        if (name == "val") return split.val;
        if (name == "test") return split.test;
        throw InvalidArgument("unknown split '" + name + "' (expected train, val or test)");
    }
    PointCloud cloud(const std::string& id) const {
        PointCloud c = read_cloud(root / "clouds" / (id + ".pnpc"));
        c.set_shape_id(id);
        return c;
    }
    Annotation annotation(const std::string& id) const {
        return read_annotation(root / "annotations" / (id + ".json"));
    }
};

std::string split_to_json(const DatasetSplit& s, std::uint64_t seed) {
    json j;
    j["seed"] = seed;
    j["train"] = s.train;
    j["val"] = s.val;
    j["test"] = s.test;
    return j.dump(2) + "\n";
}

Dataset load_dataset(const fs::path& root) {
    Dataset d{root, read_template(root / "template.json"), {}};
    try {
        const json j = json::parse(read_text_file(root / "split.json"));
        d.split.train = j.at("train").get<std::vector<std::string>>();
        d.split.val = j.at("val").get<std::vector<std::string>>();
        d.split.test = j.at("test").get<std::vector<std::string>>();
    } catch (const json::parse_error& e) {
        throw FormatError((root / "split.json").string(), e.byte, e.what());
    } catch (const json::exception& e) {
        throw InvalidData((root / "split.json").string() + ": " + e.what());
    }
    return d;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void write_run_config(const fs::path& dir, const std::map<std::string, std::string>& kv) {
    std::string text;
    for (const auto& [k, v] : kv) text += k + "=" + v + "\n";
    write_text_file(dir / "run_config.txt", text);
}

// Training data --------------------------------------------------------------

/// Normalized cloud, FPS-subsampled to `points` when larger.
AnnotatedCloud prepare(const Dataset& d, const std::string& id, std::size_t points, bool normalized) {
    PointCloud cloud = d.cloud(id);
    Annotation a = d.annotation(id);
    if (a.point_count != cloud.size())
        throw InvalidData("shape '" + id + "': annotation covers " + std::to_string(a.point_count) +
                          " points, cloud has " + std::to_string(cloud.size()));
    if (points > 0 && cloud.size() < points)
        throw ConfigError("shape '" + id + "' has " + std::to_string(cloud.size()) +
                          " points, fewer than points=" + std::to_string(points));
    if (points > 0 && cloud.size() > points) {
        const auto keep = furthest_point_sample(cloud, points);
        std::vector<long> remap(cloud.size(), -1);
        for (std::size_t i = 0; i < keep.size(); ++i) remap[keep[i]] = static_cast<long>(i);
        std::function<void(InstanceNode&)> fix = [&](InstanceNode& n) {
            std::vector<std::size_t> kept;
            for (std::size_t p : n.point_indices)
                if (remap[p] >= 0) kept.push_back(static_cast<std::size_t>(remap[p]));
            std::sort(kept.begin(), kept.end());
            n.point_indices = std::move(kept);
            for (auto& c : n.children) fix(c);
        };
        fix(a.root);
        a.point_count = points;
        cloud = cloud.select(keep);
    }
    return {normalized ? normalize(cloud) : cloud, std::move(a)};
}

std::vector<AnnotatedCloud> prepare_split(const Dataset& d, const std::string& split, const TrainConfig& c) {
    std::vector<AnnotatedCloud> out;
    for (const auto& id : d.ids(split)) out.push_back(prepare(d, id, c.points, c.normalize));
    return out;
}

std::vector<TrainingSample> instance_samples(const std::vector<AnnotatedCloud>& data,
                                             const Template& t, int level) {
    std::vector<TrainingSample> out;
    for (const auto& d : data) out.push_back({d.cloud, flatten(d.annotation, t, level), {}});
    return out;
}

struct CommonTrainOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> level;
    std::optional<std::size_t> k_masks;
    std::optional<std::size_t> points;
    std::optional<std::size_t> epochs;
};

void add_train_options(CLI::App* cmd, CommonTrainOptions& o) {
    cmd->add_option("--config", o.config_path, "key=value training config");
    cmd->add_option("--seed", o.seed, "override seed");
    cmd->add_option("--level", o.level, "segmentation level (default: finest)");
    cmd->add_option("--k-masks", o.k_masks, "override k_masks");
    cmd->add_option("--points", o.points, "override points per shape");
    cmd->add_option("--epochs", o.epochs, "override epochs");
}

TrainConfig resolve_train_config(const CommonTrainOptions& o, const Template& t) {
    TrainConfig c = o.config_path.empty() ? TrainConfig{} : read_train_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.level) c.level = *o.level;
    if (o.k_masks) c.k_masks = *o.k_masks;
    if (o.points) c.points = *o.points;
    if (o.epochs) c.epochs = *o.epochs;
    if (c.level == 0) c.level = t.finest_level();
    t.level_cut(c.level);
    if (c.points == 0) throw ConfigError("points must be positive");
    return c;
}

std::string epoch_log_line(const EpochLog& e) {
    json j;
    j["epoch"] = e.epoch;
    j["total"] = e.total;
    j["l_sem"] = e.l_sem;
    j["l_ins"] = e.l_ins;
    j["l_other"] = e.l_other;
    j["l_conf"] = e.l_conf;
    j["l_l21"] = e.l_l21;
    if (e.validation_loss) j["validation_loss"] = *e.validation_loss;
    for (const auto& [k, v] : e.validation_metrics) j["validation"][k] = v;
    return j.dump() + "\n";
}

std::string reports_json(const std::vector<EvalReport>& reports) {
    json j = json::array();
    for (const auto& r : reports) j.push_back(json::parse(report_to_json(r)));
    return json{{"reports", j}}.dump(2) + "\n";
}

// Evaluation helpers -------------------------------------------------------------

std::vector<EvalReport> evaluate_instances(const NetworkParams& params, const std::vector<AnnotatedCloud>& data,
                                           const Template& t, int level, std::vector<SemanticCase>* semantic) {
    std::vector<InstanceCase> cases;
    for (const auto& d : data) {
        const auto out = forward(params, d.cloud);
        const auto labels = flatten(d.annotation, t, level);
        cases.push_back({d.cloud.shape_id(), d.cloud.size(), gt_instances(labels), binarize(out)});
        if (semantic) {
            std::vector<int> pred(out.semantic_logits.rows());
            for (std::size_t i = 0; i < pred.size(); ++i) {
                std::size_t best = 0;
                for (std::size_t j = 1; j < out.semantic_logits.cols(); ++j)
                    if (out.semantic_logits(i, j) > out.semantic_logits(i, best)) best = j;
                pred[i] = static_cast<int>(best) + 1;
            }
            semantic->push_back({d.cloud.shape_id(), labels.semantic, std::move(pred)});
        }
    }
    return {instance_part_category_map(cases, t, level), instance_shape_map(cases, t, level)};
}

// Commands -------------------------------------------------------------------------

int cmd_gen_synthetic(std::size_t count, const std::string& category, std::uint64_t seed,
                      std::size_t points, double jitter, const fs::path& out) {
    if (count == 0) throw InvalidArgument("--count must be positive");
    if (jitter < 0.0) throw InvalidArgument("--jitter must be non-negative");
    const Template t = builtin_template(category);
    fs::create_directories(out / "clouds");
    fs::create_directories(out / "annotations");
    write_template(t, out / "template.json");
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < count; ++i) {
        const auto s = generate_synthetic({category, splitmix64(seed + i), points, jitter});
        const auto& id = s.cloud.shape_id();
        write_cloud_binary(s.cloud, out / "clouds" / (id + ".pnpc"));
        write_annotation(s.annotation, out / "annotations" / (id + ".json"));
        ids.push_back(id);
    }
    const auto split = split_dataset(ids, {0.7, 0.1, 0.2}, seed);
    write_text_file(out / "split.json", split_to_json(split, seed));
    write_run_config(out, {{"category", category},
                           {"count", std::to_string(count)},
                           {"jitter", json(jitter).dump()},
                           {"points", std::to_string(points)},
                           {"seed", std::to_string(seed)}});
    std::printf("wrote %zu %s shapes to %s (train %zu, val %zu, test %zu)\n", count, category.c_str(),
                out.string().c_str(), split.train.size(), split.val.size(), split.test.size());
    return 0;
}

int cmd_fps(const fs::path& input, std::size_t count, const fs::path& out, const std::string& indices) {
    const PointCloud cloud = read_cloud(input);
    const auto picks = furthest_point_sample(cloud, count);
    const PointCloud sub = cloud.select(picks);
    if (out.extension() == ".pnpc")
        write_cloud_binary(sub, out);
    else
        write_cloud_text(sub, out);
    if (!indices.empty()) {
        std::string text;
        for (auto i : picks) text += std::to_string(i) + "\n";
        write_text_file(indices, text);
    }
    return 0;
}

int cmd_train(const fs::path& data_dir, const fs::path& out, const CommonTrainOptions& opts,
              const std::string& resume_path) {
    const Dataset d = load_dataset(data_dir);
    TrainConfig c = resolve_train_config(opts, d.tmpl);
    c.network.semantic_labels = d.tmpl.level_cut(c.level).size();
    c.network.k_masks = c.k_masks;
    fs::create_directories(out);
    write_text_file(out / "resolved_config.txt", resolved_config(c));

    const auto train_data = prepare_split(d, "train", c);
    const auto val_data = prepare_split(d, "val", c);
    const auto train_set = instance_samples(train_data, d.tmpl, c.level);
    const auto val_set = instance_samples(val_data, d.tmpl, c.level);
    for (const auto& s : train_set) {
        const auto count = static_cast<std::size_t>(s.labels.instance_count());
        if (count <= c.k_masks) continue;
        if (c.overflow == OverflowPolicy::Fail)
            throw CapacityError("shape '" + s.cloud.shape_id() + "' has " + std::to_string(count) +
                                " instances, more than k_masks=" + std::to_string(c.k_masks));
        std::printf("shape %s: %zu instances, matching only the %zu largest\n", s.cloud.shape_id().c_str(),
                    count, c.k_masks);
    }

    std::optional<TrainState> resume;
    if (!resume_path.empty()) resume = load_checkpoint(resume_path);
    std::vector<EpochLog> log;
    const TrainState state = train(train_set, val_set, c, Objective::Instance, &log, {}, resume);
    save_checkpoint(state, out / "model.pskw");

    std::string log_text;
    for (const auto& e : log) log_text += epoch_log_line(e);
    write_text_file(out / "train_log.jsonl", log_text);

    std::vector<SemanticCase> sem;
    auto reports = evaluate_instances(state.params, val_data, d.tmpl, c.level, &sem);
    if (!sem.empty()) {
        reports.push_back(semantic_part_category_miou(sem, d.tmpl, c.level));
        reports.push_back(semantic_shape_miou(sem, d.tmpl, c.level));
    }
    write_text_file(out / "validation_report.json", reports_json(reports));
    if (!log.empty())
        std::printf("trained %zu epochs, final loss %.4f\n", log.size(), log.back().total);
    for (const auto& r : reports) std::cout << "validation " << r.metric << "\n" << format_table({r}) << "\n";
    return 0;
}

int cmd_predict(const fs::path& model, const fs::path& data_dir, const std::string& split,
                const fs::path& out, std::size_t min_points, bool normalized) {
    const Dataset d = load_dataset(data_dir);
    const TrainState state = load_checkpoint(model);
    fs::create_directories(out);
    for (const auto& id : d.ids(split)) {
        const PointCloud cloud = normalized ? normalize(d.cloud(id)) : d.cloud(id);
        const auto output = forward(state.params, cloud);
        std::vector<int> labels(output.semantic_logits.rows());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < output.semantic_logits.cols(); ++j)
                if (output.semantic_logits(i, j) > output.semantic_logits(i, best)) best = j;
            labels[i] = static_cast<int>(best) + 1;
        }
        write_semantic_prediction(labels, out / (id + ".sem.txt"));
        if (state.params.config.has_instance_heads())
            write_instance_predictions(binarize(output, min_points), out / (id + ".ins.json"));
    }
    write_run_config(out, {{"min_points", std::to_string(min_points)},
                           {"model", model.filename().string()},
                           {"normalize", normalized ? "true" : "false"},
                           {"split", split}});
    std::printf("wrote predictions for %zu shapes to %s\n", d.ids(split).size(), out.string().c_str());
    return 0;
}

int finish_eval(const std::vector<EvalReport>& reports, const fs::path& out) {
    if (!out.empty()) write_text_file(out, reports_json(reports));
    for (const auto& r : reports) std::cout << r.metric << "\n" << format_table({r}) << "\n";
    return 0;
}

struct EvalOptions {
    fs::path data, pred, out;
    std::string split = "test";
    std::optional<int> level;
    std::vector<NodeId> exclude;
    std::string pooling = "pooled";
};

/// Level label ids whose cut node is excluded or lies under an excluded node.
std::set<int> excluded_labels(const Template& t, int level, const std::set<NodeId>& excluded) {
    std::set<int> out;
    const auto& cut = t.level_cut(level);
    for (std::size_t i = 0; i < cut.size(); ++i)
        for (NodeId e : excluded)
            if (t.is_ancestor_or_self(e, cut[i])) out.insert(static_cast<int>(i) + 1);
    return out;
}

std::set<NodeId> checked_exclusions(const Template& t, const std::vector<NodeId>& ids) {
    for (NodeId id : ids) t.node(id);
    return {ids.begin(), ids.end()};
}

int cmd_eval_sem(const EvalOptions& o) {
    const Dataset d = load_dataset(o.data);
    const int level = o.level.value_or(d.tmpl.finest_level());
    const auto excluded = checked_exclusions(d.tmpl, o.exclude);
    const auto dropped = excluded_labels(d.tmpl, level, excluded);
    IouPooling pooling = IouPooling::Pooled;
    if (o.pooling == "per-shape")
        pooling = IouPooling::PerShape;
    else if (o.pooling != "pooled")
        throw InvalidArgument("unknown pooling '" + o.pooling + "' (expected pooled or per-shape)");
    std::vector<SemanticCase> cases;
    for (const auto& id : d.ids(o.split)) {
        const auto labels = flatten(without_nodes(d.annotation(id), excluded), d.tmpl, level);
        auto prediction = read_semantic_prediction(o.pred / (id + ".sem.txt"));
        for (auto& p : prediction)
            if (dropped.count(p)) p = 0;
        cases.push_back({id, labels.semantic, std::move(prediction)});
    }
    return finish_eval({semantic_part_category_miou(cases, d.tmpl, level, pooling),
                        semantic_shape_miou(cases, d.tmpl, level)},
                       o.out);
}

int cmd_eval_ins(const EvalOptions& o) {
    const Dataset d = load_dataset(o.data);
    const int level = o.level.value_or(d.tmpl.finest_level());
    const auto excluded = checked_exclusions(d.tmpl, o.exclude);
    const auto dropped = excluded_labels(d.tmpl, level, excluded);
    std::vector<InstanceCase> cases;
    for (const auto& id : d.ids(o.split)) {
        const Annotation a = d.annotation(id);
        const auto labels = flatten(a, d.tmpl, level);
        const auto kept = flatten(without_nodes(a, excluded), d.tmpl, level);
        auto prediction = read_instance_predictions(o.pred / (id + ".ins.json"));
        std::erase_if(prediction.masks, [&](const PredictedMask& m) { return dropped.count(m.semantic) > 0; });
        // Points of excluded parts are removed from the remaining masks as well.
        auto is_excluded = [&](std::size_t p) {
            return p < kept.semantic.size() && labels.semantic[p] != 0 && kept.semantic[p] == 0;
        };
        if (!excluded.empty())
            for (auto& m : prediction.masks) std::erase_if(m.points, is_excluded);
        cases.push_back({id, a.point_count, gt_instances(kept), std::move(prediction)});
    }
    return finish_eval({instance_part_category_map(cases, d.tmpl, level),
                        instance_shape_map(cases, d.tmpl, level)},
                       o.out);
}

int cmd_eval_hier(const EvalOptions& o) {
    const Dataset d = load_dataset(o.data);
    const Template aug = augment_other(d.tmpl);
    const auto excluded = checked_exclusions(d.tmpl, o.exclude);
    std::vector<PathCase> cases;
    for (const auto& id : d.ids(o.split)) {
        const auto p = parse_path_prediction(read_text_file(o.pred / (id + ".paths.json")));
        cases.push_back({id, point_paths(without_nodes(d.annotation(id), excluded), aug), p.paths});
    }
    return finish_eval({hierarchical_miou(cases, aug)}, o.out);
}

int cmd_train_hier(const std::string& strategy_name, const fs::path& data_dir, const fs::path& out,
                   const CommonTrainOptions& opts, const std::vector<std::string>& level_weights) {
    const HierStrategy strategy = parse_strategy(strategy_name);
    const Dataset d = load_dataset(data_dir);
    TrainConfig c = resolve_train_config(opts, d.tmpl);
    std::map<int, double> weights;
    for (const auto& lw : level_weights) {
        const auto eq = lw.find('=');
        try {
            if (eq == std::string::npos) throw std::invalid_argument(lw);
            std::size_t used = 0;
            const int level = std::stoi(lw.substr(0, eq));
            const double w = std::stod(lw.substr(eq + 1), &used);
            if (used != lw.size() - eq - 1) throw std::invalid_argument(lw);
            d.tmpl.level_cut(level);
            weights[level] = w;
        } catch (const std::logic_error&) {
            throw ConfigError("bad --level-weight '" + lw + "' (expected LEVEL=WEIGHT)");
        }
    }
    if (!weights.empty() && strategy != HierStrategy::Ensemble)
        throw ConfigError("--level-weight applies to the ensemble strategy only");
    fs::create_directories(out / "predictions");
    std::string resolved = resolved_config(c) + "strategy=" + std::string(to_string(strategy)) + "\n";
    for (const auto& [level, w] : weights) resolved += "level_weight." + std::to_string(level) + "=" + json(w).dump() + "\n";
    write_text_file(out / "resolved_config.txt", resolved);

    auto model = train_hierarchical(strategy, d.tmpl, prepare_split(d, "train", c), prepare_split(d, "val", c), c);
    model.level_weights = weights;
    for (const auto& [member, params] : model.nets)
        save_checkpoint({params, {}, 0}, out / ("model_" + std::to_string(member) + ".pskw"), false);

    const Template aug = augment_other(d.tmpl);
    std::vector<PathCase> cases;
    for (const auto& id : d.ids("test")) {
        const PointCloud cloud = c.normalize ? normalize(d.cloud(id)) : d.cloud(id);
        const auto paths = predict_paths(model, d.tmpl, cloud);
        write_text_file(out / "predictions" / (id + ".paths.json"), path_prediction_to_json(paths));
        cases.push_back({id, point_paths(d.annotation(id), aug), paths.paths});
    }
    const auto report = hierarchical_miou(cases, aug);
    write_text_file(out / "hier_report.json", reports_json({report}));
    std::cout << to_string(strategy) << "\n" << format_table({report});
    return 0;
}

int cmd_validate(const fs::path& template_path, const std::vector<std::string>& files, bool strict,
                 const fs::path& out) {
    const Template t = read_template(template_path);
    json report = json::array();
    std::size_t total = 0;
    for (const auto& f : files) {
        const Annotation a = read_annotation(f);
        const auto violations = validate_annotation(a, t);
        json entry{{"file", f}, {"shape_id", a.shape_id}, {"violations", json::array()}};
        for (const auto& v : violations) {
            entry["violations"].push_back({{"path", v.path}, {"message", v.message}});
            std::printf("%s: %s: %s\n", f.c_str(), v.path.c_str(), v.message.c_str());
        }
        total += violations.size();
        report.push_back(entry);
    }
    json doc{{"annotations", report}, {"violation_count", total}, {"warnings", t.warnings()}};
    if (!out.empty()) write_text_file(out, doc.dump(2) + "\n");
    for (const auto& w : t.warnings()) std::printf("template warning: %s\n", w.c_str());
    std::printf("%zu annotation(s), %zu violation(s)\n", files.size(), total);
    return strict && total > 0 ? 1 : 0;
}

int cmd_consistency(const fs::path& template_path, const std::vector<std::string>& files,
                    bool symmetric, std::size_t top, const fs::path& out) {
    if (files.size() < 2) throw InvalidArgument("consistency needs at least two annotations");
    const Template t = read_template(template_path);
    const Annotation reference = read_annotation(files.front());
    json pairs = json::array();
    for (std::size_t i = 1; i < files.size(); ++i) {
        const Annotation other = read_annotation(files[i]);
        const auto m = confusion_matrix(reference, other, t,
                                        symmetric ? ConfusionMode::Symmetric : ConfusionMode::Reference);
        const double score = consistency_score(m);
        json confused = json::array();
        for (const auto& c : ranked_confusions(m, top))
            confused.push_back({{"reference", c.reference}, {"compared", c.compared},
                                {"rate", c.rate}, {"count", c.count}});
        pairs.push_back({{"reference", files.front()},
                         {"compared", files[i]},
                         {"labels", m.labels},
                         {"counts", m.counts},
                         {"row_normalized", m.row_normalized},
                         {"consistency", score},
                         {"top_confusions", confused}});
        std::printf("%s vs %s: consistency %.4f\n", files.front().c_str(), files[i].c_str(), score);
    }
    if (!out.empty()) write_text_file(out, json{{"pairs", pairs}}.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical part segmentation toolkit"};
    app.require_subcommand(1);

    std::size_t count = 0, points = 1024, min_points = 1, top = 10;
    std::string category = "chair", strategy, split = "test", indices, resume;
    std::uint64_t seed = 0;
    double jitter = 0.0;
    bool strict = false, symmetric = false;
    fs::path out, input, data, model, template_path;
    std::vector<std::string> files;
    CommonTrainOptions train_opts, hier_opts;

    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic dataset");
    gen->add_option("--count", count, "number of shapes")->required();
    gen->add_option("--category", category, "chair or lamp");
    gen->add_option("--seed", seed, "base seed");
    gen->add_option("--points", points, "points per shape");
    gen->add_option("--jitter", jitter, "Gaussian jitter sigma");
    gen->add_option("--out", out, "output directory")->required();

    auto* fps = app.add_subcommand("fps", "furthest point sampling");
    fps->add_option("--input", input, "input cloud")->required();
    fps->add_option("--points", count, "points to keep")->required();
    fps->add_option("--out", out, "output cloud (.pnpc for binary)")->required();
    fps->add_option("--indices", indices, "also write the selected indices");

    auto* train_cmd = app.add_subcommand("train", "train the instance segmentation network");
    train_cmd->add_option("--data", data, "dataset directory")->required();
    train_cmd->add_option("--out", out, "run directory")->required();
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");
    add_train_options(train_cmd, train_opts);

    auto* predict = app.add_subcommand("predict", "write semantic and instance predictions");
    predict->add_option("--model", model, "checkpoint")->required();
    predict->add_option("--data", data, "dataset directory")->required();
    predict->add_option("--split", split, "train, val or test");
    predict->add_option("--min-points", min_points, "drop smaller masks");
    bool no_normalize = false;
    predict->add_flag("--no-normalize", no_normalize, "feed clouds as stored");
    predict->add_option("--out", out, "prediction directory")->required();

    EvalOptions eval_opts;
    std::map<std::string, CLI::App*> evals;
    for (const char* name : {"eval-sem", "eval-ins", "eval-hier"}) {
        auto* e = app.add_subcommand(name, std::string("evaluate ") + (name + 5) + " predictions");
        e->add_option("--data", eval_opts.data, "dataset directory")->required();
        e->add_option("--pred", eval_opts.pred, "prediction directory")->required();
        e->add_option("--split", eval_opts.split, "train, val or test");
        if (std::string(name) != "eval-hier") e->add_option("--level", eval_opts.level, "level (default: finest)");
        e->add_option("--exclude", eval_opts.exclude, "template node ids left out of evaluation")->delimiter(',');
        e->add_option("--out", eval_opts.out, "report file");
        evals[name] = e;
    }
    evals["eval-sem"]->add_option("--pooling", eval_opts.pooling, "pooled or per-shape");

    auto* hier = app.add_subcommand("train-hier", "train and apply a hierarchical strategy");
    hier->add_option("--strategy", strategy, "bottom-up, top-down or ensemble")->required();
    hier->add_option("--data", data, "dataset directory")->required();
    hier->add_option("--out", out, "run directory")->required();
    add_train_options(hier, hier_opts);
    std::vector<std::string> level_weights;
    hier->add_option("--level-weight", level_weights, "ensemble weight as LEVEL=WEIGHT (repeatable)");

    auto* validate = app.add_subcommand("validate", "check annotations against a template");
    validate->add_option("--template", template_path, "template file")->required();
    validate->add_flag("--strict", strict, "exit 1 when violations are found");
    validate->add_option("--out", out, "report file");
    validate->add_option("annotations", files, "annotation files")->required();

    auto* consistency = app.add_subcommand("consistency", "compare annotations of one shape");
    consistency->add_option("--template", template_path, "template file")->required();
    consistency->add_flag("--symmetric", symmetric, "sum both orderings");
    consistency->add_option("--top", top, "confused pairs to list");
    consistency->add_option("--out", out, "report file");
    consistency->add_option("annotations", files, "annotation files (first is the reference)")->required();

    CLI11_PARSE(app, argc, argv);
    kernels::configure_threads_from_env();

    try {
        if (gen->parsed()) return cmd_gen_synthetic(count, category, seed, points, jitter, out);
        if (fps->parsed()) return cmd_fps(input, count, out, indices);
        if (train_cmd->parsed()) return cmd_train(data, out, train_opts, resume);
        if (predict->parsed()) return cmd_predict(model, data, split, out, min_points, !no_normalize);
        if (evals["eval-sem"]->parsed()) return cmd_eval_sem(eval_opts);
        if (evals["eval-ins"]->parsed()) return cmd_eval_ins(eval_opts);
        if (evals["eval-hier"]->parsed()) return cmd_eval_hier(eval_opts);
        if (hier->parsed()) return cmd_train_hier(strategy, data, out, hier_opts, level_weights);
        if (validate->parsed()) return cmd_validate(template_path, files, strict, out);
        if (consistency->parsed()) return cmd_consistency(template_path, files, symmetric, top, out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "partseg: %s\n", e.what());
        return 2;
    }
    return 0;
}
