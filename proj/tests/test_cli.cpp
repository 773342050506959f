#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fixtures.hpp"
#include "partseg/annotation.hpp"
#include "partseg/infer.hpp"
#include "partseg/metrics.hpp"
#include "partseg/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace partseg;

namespace {

const fs::path kWork = fs::temp_directory_path() / "partseg_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string("\"") + PARTSEG_CLI_PATH + "\" " + args + " > \"" +
                            (kWork / "last_stdout.txt").string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_output() { return read_text_file(kWork / "last_stdout.txt"); }

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_text_file(e.path());
    return files;
}

void check_identical(const fs::path& a, const fs::path& b) {
    const auto sa = snapshot(a), sb = snapshot(b);
    REQUIRE(!sa.empty());
    CHECK(sa.size() == sb.size());
    for (const auto& [name, bytes] : sa) {
        INFO(name);
        auto it = sb.find(name);
        REQUIRE(it != sb.end());
        CHECK(it->second == bytes);
    }
}

double average_score(const fs::path& report) {
    return json::parse(read_text_file(report)).at("reports").at(0).at("average").at("score").get<double>();
}

// Small dataset shared by the tests below.
fs::path dataset() {
    static const fs::path dir = [] {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        const fs::path d = kWork / "data";
        REQUIRE(run("gen-synthetic --count 10 --seed 3 --points 256 --out " + q(d)) == 0);
        return d;
    }();
    return dir;
}

std::string report_average_metric(const fs::path& report) {
    return json::parse(read_text_file(report)).at("reports").at(0).at("metric").get<std::string>();
}

json split_of(const fs::path& d) { return json::parse(read_text_file(d / "split.json")); }

}  // namespace

TEST_CASE("gen-synthetic writes a complete, reproducible dataset") {
    const fs::path d = dataset();
    std::size_t clouds = 0, annotations = 0;
    for (const auto& e : fs::directory_iterator(d / "clouds")) clouds += e.path().extension() == ".pnpc";
    for (const auto& e : fs::directory_iterator(d / "annotations")) annotations += e.path().extension() == ".json";
    CHECK(clouds == 10);
    CHECK(annotations == 10);
    CHECK(fs::exists(d / "template.json"));
    CHECK(fs::exists(d / "run_config.txt"));
    const json split = split_of(d);
    CHECK(split["train"].size() == 7);
    CHECK(split["val"].size() == 1);
    CHECK(split["test"].size() == 2);

    REQUIRE(run("gen-synthetic --count 10 --seed 3 --points 256 --out " + q(kWork / "data_again")) == 0);
    check_identical(d, kWork / "data_again");
    REQUIRE(run("gen-synthetic --count 10 --seed 4 --points 256 --out " + q(kWork / "data_other")) == 0);
    CHECK(snapshot(d) != snapshot(kWork / "data_other"));
}

TEST_CASE("fps is deterministic") {
    const fs::path d = dataset();
    const std::string id = split_of(d)["train"][0];
    const fs::path in = d / "clouds" / (id + ".pnpc");
    for (const char* name : {"a", "b"}) {
        fs::create_directories(kWork / "fps" / name);
        REQUIRE(run("fps --input " + q(in) + " --points 32 --out " + q(kWork / "fps" / name / "out.xyz") +
                    " --indices " + q(kWork / "fps" / name / "idx.txt")) == 0);
    }
    check_identical(kWork / "fps" / "a", kWork / "fps" / "b");
    CHECK(read_text_file(kWork / "fps" / "a" / "idx.txt").rfind("0\n", 0) == 0);
    CHECK(run("fps --input " + q(in) + " --points 0 --out " + q(kWork / "fps" / "bad.xyz")) != 0);
}

TEST_CASE("train, predict and evaluate reproducibly") {
    const fs::path d = dataset();
    const std::string common = " --data " + q(d) + " --points 128 --k-masks 24 --seed 5";
    REQUIRE(run("train --epochs 2" + common + " --out " + q(kWork / "train_a")) == 0);
    REQUIRE(run("train --epochs 2" + common + " --out " + q(kWork / "train_b")) == 0);
    check_identical(kWork / "train_a", kWork / "train_b");

    const std::string config = read_text_file(kWork / "train_a" / "resolved_config.txt");
    for (const char* line : {"lambda_ins=1\n", "lambda_other=1\n", "lambda_conf=1\n", "lambda_l21=0.1\n",
                             "k_masks=24\n", "points=128\n", "seed=5\n", "epochs=2\n"})
        CHECK(config.find(line) != std::string::npos);
    std::istringstream log(read_text_file(kWork / "train_a" / "train_log.jsonl"));
    std::string line;
    std::size_t epochs = 0;
    while (std::getline(log, line)) {
        const json e = json::parse(line);
        CHECK(e.contains("total"));
        CHECK(e.contains("l_l21"));
        ++epochs;
    }
    CHECK(epochs == 2);
    CHECK(json::parse(read_text_file(kWork / "train_a" / "validation_report.json"))["reports"].size() == 4);

    SUBCASE("resume continues bit-exactly") {
        REQUIRE(run("train --epochs 1" + common + " --out " + q(kWork / "train_r1")) == 0);
        REQUIRE(run("train --epochs 2" + common + " --resume " + q(kWork / "train_r1" / "model.pskw") +
                    " --out " + q(kWork / "train_r2")) == 0);
        CHECK(read_text_file(kWork / "train_r2" / "model.pskw") ==
              read_text_file(kWork / "train_a" / "model.pskw"));
    }

    SUBCASE("predictions and reports are byte-identical across runs") {
        const fs::path model = kWork / "train_a" / "model.pskw";
        for (const char* name : {"pred_a", "pred_b"})
            REQUIRE(run("predict --model " + q(model) + " --data " + q(d) + " --out " + q(kWork / name)) == 0);
        check_identical(kWork / "pred_a", kWork / "pred_b");
        for (const char* mode : {"eval-sem", "eval-ins"}) {
            REQUIRE(run(std::string(mode) + " --data " + q(d) + " --pred " + q(kWork / "pred_a") + " --out " +
                        q(kWork / (std::string(mode) + "_1.json"))) == 0);
            REQUIRE(run(std::string(mode) + " --data " + q(d) + " --pred " + q(kWork / "pred_a") + " --out " +
                        q(kWork / (std::string(mode) + "_2.json"))) == 0);
            CHECK(read_text_file(kWork / (std::string(mode) + "_1.json")) ==
                  read_text_file(kWork / (std::string(mode) + "_2.json")));
        }
    }
}

TEST_CASE("config errors fail before training") {
    const fs::path d = dataset();
    const fs::path cfg = kWork / "bad.cfg";
    write_text_file(cfg, "epochs=2\nlearning_rate=0.1\n");
    CHECK(run("train --data " + q(d) + " --config " + q(cfg) + " --out " + q(kWork / "train_bad")) != 0);
    CHECK(last_output().find("learning_rate") != std::string::npos);
    CHECK(!fs::exists(kWork / "train_bad" / "model.pskw"));
}

TEST_CASE("capacity overflow fails by default and truncates on request") {
    const fs::path d = dataset();
    const std::string base = "train --data " + q(d) + " --points 128 --epochs 1 --k-masks 2";
    CHECK(run(base + " --out " + q(kWork / "overflow_fail")) != 0);
    CHECK(last_output().find("k_masks=2") != std::string::npos);
    CHECK(!fs::exists(kWork / "overflow_fail" / "model.pskw"));
    const fs::path cfg = kWork / "keep.cfg";
    write_text_file(cfg, "overflow=keep_largest\nconf_unmatched=false\n");
    REQUIRE(run(base + " --config " + q(cfg) + " --out " + q(kWork / "overflow_keep")) == 0);
    CHECK(last_output().find("matching only the 2 largest") != std::string::npos);
    const std::string resolved = read_text_file(kWork / "overflow_keep" / "resolved_config.txt");
    CHECK(resolved.find("overflow=keep_largest\n") != std::string::npos);
    CHECK(resolved.find("conf_unmatched=false\n") != std::string::npos);
}

TEST_CASE("ground truth fed as prediction scores 100 in every evaluator") {
    const fs::path d = dataset();
    const Template t = read_template(d / "template.json");
    const Template aug = augment_other(t);
    const fs::path pred = kWork / "gt_pred";
    fs::create_directories(pred);
    const json split = split_of(d);
    for (const auto& id : split["test"]) {
        const Annotation a = read_annotation(d / "annotations" / (id.get<std::string>() + ".json"));
        const auto labels = flatten(a, t, t.finest_level());
        write_semantic_prediction(labels.semantic, pred / (a.shape_id + ".sem.txt"));
        InstancePredictionSet masks;
        for (const auto& g : gt_instances(labels)) masks.masks.push_back({g.points, 1.0, g.semantic});
        write_instance_predictions(masks, pred / (a.shape_id + ".ins.json"));
        write_text_file(pred / (a.shape_id + ".paths.json"),
                        path_prediction_to_json({a.shape_id, point_paths(a, aug)}));
    }
    for (const char* mode : {"eval-sem", "eval-ins", "eval-hier"}) {
        INFO(mode);
        const fs::path out = kWork / (std::string("gt_") + mode + ".json");
        REQUIRE(run(std::string(mode) + " --data " + q(d) + " --pred " + q(pred) + " --out " + q(out)) == 0);
        const json reports = json::parse(read_text_file(out))["reports"];
        for (const auto& r : reports) CHECK(r["average"]["score"].get<double>() == 1.0);
        CHECK(last_output().find("100.0") != std::string::npos);
    }
    CHECK(run("eval-sem --data " + q(d) + " --level 2 --pred " + q(pred) + " --out " + q(kWork / "l2.json")) != 0);

    SUBCASE("excluded parts leave the report") {
        const NodeId leg = t.level_cut(t.finest_level()).front();
        const int label = level_label_id(t, t.finest_level(), leg);
        for (const char* mode : {"eval-sem", "eval-ins", "eval-hier"}) {
            INFO(mode);
            const fs::path out = kWork / (std::string("ex_") + mode + ".json");
            REQUIRE(run(std::string(mode) + " --data " + q(d) + " --pred " + q(pred) + " --exclude " +
                        std::to_string(leg) + " --out " + q(out)) == 0);
            const json r = json::parse(read_text_file(out))["reports"][0];
            CHECK(r["average"]["score"].get<double>() == 1.0);
            if (std::string(mode) != "eval-hier")
                for (const auto& c : r["per_part_category"]) CHECK(c["label"].get<int>() != label);
        }
        CHECK(run("eval-sem --data " + q(d) + " --pred " + q(pred) + " --exclude 999 --out " +
                  q(kWork / "ex_bad.json")) != 0);
        REQUIRE(run("eval-sem --data " + q(d) + " --pred " + q(pred) + " --pooling per-shape --out " +
                    q(kWork / "per_shape.json")) == 0);
        CHECK(report_average_metric(kWork / "per_shape.json") == "part_category_miou_per_shape");
    }
}

TEST_CASE("train-hier runs every strategy deterministically") {
    const fs::path d = dataset();
    for (const char* strategy : {"bottom-up", "top-down", "ensemble"}) {
        INFO(strategy);
        const std::string args = std::string("train-hier --strategy ") + strategy + " --data " + q(d) +
                                 " --points 128 --epochs 1 --out ";
        const fs::path a = kWork / (std::string("hier_a_") + strategy);
        const fs::path b = kWork / (std::string("hier_b_") + strategy);
        REQUIRE(run(args + q(a)) == 0);
        REQUIRE(run(args + q(b)) == 0);
        check_identical(a, b);
        const double score = average_score(a / "hier_report.json");
        CHECK(score >= 0.0);
        CHECK(score <= 1.0);
        REQUIRE(run("eval-hier --data " + q(d) + " --pred " + q(a / "predictions") + " --out " +
                    q(a / "eval.json")) == 0);
        CHECK(average_score(a / "eval.json") == score);
    }
    CHECK(run("train-hier --strategy sideways --data " + q(d) + " --out " + q(kWork / "hier_bad")) != 0);
    CHECK(run("train-hier --strategy bottom-up --level-weight 1=2 --data " + q(d) + " --out " +
              q(kWork / "hier_bad")) != 0);
    CHECK(run("train-hier --strategy ensemble --level-weight 1=x --data " + q(d) + " --out " +
              q(kWork / "hier_bad")) != 0);
    const fs::path weighted = kWork / "hier_weighted";
    REQUIRE(run("train-hier --strategy ensemble --level-weight 1=0 --level-weight 2=0 --data " + q(d) +
                " --points 128 --epochs 1 --out " + q(weighted)) == 0);
    CHECK(read_text_file(weighted / "resolved_config.txt").find("level_weight.1=0.0\n") != std::string::npos);
}

TEST_CASE("validate reports violations and exits nonzero only when strict") {
    const fs::path d = dataset();
    const std::string id = split_of(d)["train"][0];
    const fs::path good = d / "annotations" / (id + ".json");
    Annotation broken = read_annotation(good);
    broken.root.children.front().point_indices.push_back(0);
    const fs::path bad = kWork / "broken.json";
    write_annotation(broken, bad);
    const std::string tmpl = " --template " + q(d / "template.json");

    CHECK(run("validate" + tmpl + " " + q(good)) == 0);
    CHECK(run("validate --strict" + tmpl + " " + q(good)) == 0);
    CHECK(run("validate" + tmpl + " --out " + q(kWork / "violations.json") + " " + q(good) + " " + q(bad)) == 0);
    const json report = json::parse(read_text_file(kWork / "violations.json"));
    CHECK(report["annotations"][0]["violations"].empty());
    CHECK(!report["annotations"][1]["violations"].empty());
    CHECK(run("validate --strict" + tmpl + " " + q(bad)) == 1);
}

TEST_CASE("consistency scores duplicates and relabeled copies") {
    const fs::path d = dataset();
    const std::string id = split_of(d)["train"][1];
    const Annotation a = read_annotation(d / "annotations" / (id + ".json"));
    const auto [reference, relabeled] = fixtures::quarter_relabeled(a);
    write_annotation(reference, kWork / "ref.json");
    write_annotation(relabeled, kWork / "relabeled.json");
    const std::string tmpl = " --template " + q(d / "template.json");

    REQUIRE(run("consistency" + tmpl + " --out " + q(kWork / "cons.json") + " " + q(kWork / "ref.json") + " " +
                q(kWork / "ref.json") + " " + q(kWork / "relabeled.json")) == 0);
    const json pairs = json::parse(read_text_file(kWork / "cons.json"))["pairs"];
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0]["consistency"].get<double>() == 1.0);
    CHECK(pairs[1]["consistency"].get<double>() == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(!pairs[1]["top_confusions"].empty());

    Annotation other = a;
    other.shape_id = "someone_else";
    write_annotation(other, kWork / "other.json");
    CHECK(run("consistency" + tmpl + " " + q(kWork / "ref.json") + " " + q(kWork / "other.json")) != 0);
    CHECK(run("consistency" + tmpl + " " + q(kWork / "ref.json")) != 0);
}
