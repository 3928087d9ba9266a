#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diarkit/simulate.hpp"
#include "diarkit/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace diarkit;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string scratch_dir(const std::string& name) {
    const std::string dir = "/tmp/diarkit_train_" + name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Small dataset for loop tests: short sessions keep steps cheap.
std::string make_dataset(const std::string& name, int sessions, double duration,
                         std::uint64_t seed) {
    const std::string dir = scratch_dir(name);
    DatasetSpec spec;
    spec.n_sessions = sessions;
    spec.min_speakers = 2;
    spec.max_speakers = 2;
    spec.duration_s = duration;
    spec.overlap_target = 0.15;
    spec.seed = seed;
    return build_dataset(dir, spec).manifest_path;
}

Config toy_tsvad_config(std::uint64_t seed) {
    Config c = Config::defaults_for(ModelVariant::BLSTM_TIME_TRANS_SPK, "toy");
    c.training.seed = seed;
    c.training.batch = 2;
    c.training.chunk_seconds = 4.0;
    c.training.peak_lr = 2e-3;
    c.training.warmup_steps = 4;
    c.training.total_steps = 12;
    c.finalize();
    return c;
}

Config toy_eda_config(ModelVariant v, std::uint64_t seed) {
    Config c = Config::defaults_for(v, "toy");
    c.training.seed = seed;
    c.training.batch = 2;
    c.training.chunk_seconds = 4.0;
    c.training.peak_lr = 1e-3;
    c.training.warmup_steps = 4;
    c.training.total_steps = 10;
    c.finalize();
    return c;
}

}  // namespace

TEST_CASE("manifests parse and validate") {
    const std::string dir = scratch_dir("manifest");
    const std::string path = dir + "/m.tsv";
    {
        std::ofstream out(path);
        out << "a\t" << dir << "/a.wav\t" << dir << "/a.rttm\n";
        out << "\n";  // blank lines are skipped
        out << "b\t" << dir << "/b.wav\t" << dir << "/b.rttm\n";
    }
    auto entries = read_manifest(path);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].id == "a");
    CHECK(entries[1].rttm_path == dir + "/b.rttm");

    {
        std::ofstream out(path);
        out << "only_two_fields\t/tmp/x.wav\n";
    }
    CHECK_THROWS_AS(read_manifest(path), ContractError);
    {
        std::ofstream out(path);
        out << "";
    }
    CHECK_THROWS_AS(read_manifest(path), ContractError);
    CHECK_THROWS_AS(read_manifest(dir + "/missing.tsv"), IoError);
}

TEST_CASE("session loading rasterizes reference labels at the model rate") {
    const std::string manifest = make_dataset("load", 2, 12.0, 31);
    Config c = toy_tsvad_config(1);
    auto sessions = load_tsvad_sessions(manifest, c);
    REQUIRE(sessions.size() == 2);

    const auto entries = read_manifest(manifest);
    for (std::size_t i = 0; i < sessions.size(); ++i) {
        const TrainSession& s = sessions[i];
        CHECK(s.id == entries[i].id);
        CHECK(s.features.dim(1) == 80);
        CHECK(s.labels.dim(0) == s.features.dim(0) / 8);
        CHECK(s.labels.dim(1) == static_cast<int>(s.speakers.size()));
        CHECK(s.speakers.size() == 2);

        // Label matrix equals the center-cover rasterization done by hand.
        const auto ref = read_rttm_file(entries[i].rttm_path);
        const double frame_s = 0.08;
        for (int t = 0; t < s.labels.dim(0); ++t) {
            const double center = (t + 0.5) * frame_s;
            for (int k = 0; k < s.labels.dim(1); ++k) {
                bool inside = false;
                for (const RttmSegment& seg : ref) {
                    if (seg.speaker == s.speakers[static_cast<std::size_t>(k)] &&
                        center >= seg.onset && center < seg.offset()) {
                        inside = true;
                    }
                }
                CHECK(s.labels.at2(t, k) == (inside ? 1.0 : 0.0));
            }
        }
    }

    auto eda_sessions = load_eda_sessions(manifest, toy_eda_config(ModelVariant::EDA_TSVAD, 1));
    REQUIRE(eda_sessions.size() == 2);
    CHECK(eda_sessions[0].features.dim(1) == 15 * 40);
    CHECK(eda_sessions[0].labels.dim(0) == eda_sessions[0].features.dim(0));
}

TEST_CASE("a short target-speaker run reduces the loss and logs every step") {
    const std::string manifest = make_dataset("tsvad_run", 2, 16.0, 33);
    Config c = toy_tsvad_config(5);
    auto sessions = load_tsvad_sessions(manifest, c);
    TsVadModel model = build_tsvad_model(c);

    const std::string dir = scratch_dir("tsvad_run_out");
    TrainOptions opts;
    opts.loss_csv_path = dir + "/loss.csv";
    opts.checkpoint_path = dir + "/model.ckpt";
    TrainResult r = train_tsvad_model(model, sessions, c, opts);

    CHECK_FALSE(r.nan_abort);
    CHECK(r.steps == c.training.total_steps);
    CHECK(r.losses.size() == static_cast<std::size_t>(c.training.total_steps));
    CHECK(r.last_loss < r.first_loss);

    // CSV layout: header + one row per step; lr column follows the schedule.
    std::ifstream csv(opts.loss_csv_path);
    std::string line;
    REQUIRE(std::getline(csv, line));
    CHECK(line == "step,loss,lr");
    int rows = 0;
    LrSchedule sched{c.training.peak_lr, c.training.warmup_steps, c.training.total_steps};
    while (std::getline(csv, line)) {
        ++rows;
        std::istringstream cells(line);
        std::string step_s, loss_s, lr_s;
        REQUIRE(std::getline(cells, step_s, ','));
        REQUIRE(std::getline(cells, loss_s, ','));
        REQUIRE(std::getline(cells, lr_s, ','));
        CHECK(std::stoi(step_s) == rows);
        CHECK(std::stod(loss_s) == r.losses[static_cast<std::size_t>(rows - 1)]);
        CHECK(std::stod(lr_s) == doctest::Approx(sched.at(rows)).epsilon(1e-12));
    }
    CHECK(rows == c.training.total_steps);

    // The checkpoint written at the end restores the trained weights.
    CheckpointData data = load_checkpoint(opts.checkpoint_path);
    TsVadModel restored = build_tsvad_model(c);
    ParamList restored_params = restored.parameters();
    load_into(restored_params, data);
    ParamList trained_params = model.parameters();
    for (std::size_t i = 0; i < trained_params.size(); ++i) {
        const auto a = trained_params[i].tensor.values();
        const auto b = restored_params[i].tensor.values();
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
    }
}

TEST_CASE("fixed seeds give bit-identical loss logs") {
    const std::string manifest = make_dataset("determinism", 2, 12.0, 35);
    const std::string dir = scratch_dir("determinism_out");
    std::vector<std::string> csvs;
    for (int run = 0; run < 2; ++run) {
        Config c = toy_tsvad_config(9);
        c.training.total_steps = 6;
        c.finalize();
        auto sessions = load_tsvad_sessions(manifest, c);
        TsVadModel model = build_tsvad_model(c);
        TrainOptions opts;
        opts.loss_csv_path = dir + "/loss_" + std::to_string(run) + ".csv";
        train_tsvad_model(model, sessions, c, opts);
        csvs.push_back(slurp(opts.loss_csv_path));
    }
    CHECK(csvs[0] == csvs[1]);
    CHECK(csvs[0].find("step,loss,lr\n") == 0);

    // A different seed must actually change the trajectory.
    Config c = toy_tsvad_config(10);
    c.training.total_steps = 6;
    c.finalize();
    auto sessions = load_tsvad_sessions(manifest, c);
    TsVadModel model = build_tsvad_model(c);
    TrainOptions opts;
    opts.loss_csv_path = dir + "/loss_other.csv";
    train_tsvad_model(model, sessions, c, opts);
    CHECK(slurp(opts.loss_csv_path) != csvs[0]);
}

TEST_CASE("both attractor variants train and reduce the loss") {
    const std::string manifest = make_dataset("eda_run", 2, 16.0, 37);
    for (ModelVariant v : {ModelVariant::EDA_TSVAD, ModelVariant::EDA_DOT}) {
        Config c = toy_eda_config(v, 11);
        auto sessions = load_eda_sessions(manifest, c);
        EdaTsVadModel model = build_eda_tsvad_model(c);
        TrainOptions opts;
        TrainResult r = train_eda_model(model, sessions, c, opts);
        CHECK_FALSE(r.nan_abort);
        CHECK(r.steps == c.training.total_steps);
        CHECK(r.last_loss < r.first_loss);
    }
}

TEST_CASE("a poisoned parameter aborts and keeps the previous checkpoint") {
    const std::string manifest = make_dataset("nan_abort", 1, 10.0, 39);
    Config c = toy_tsvad_config(13);
    c.training.total_steps = 6;
    c.finalize();
    auto sessions = load_tsvad_sessions(manifest, c);
    TsVadModel model = build_tsvad_model(c);

    const std::string dir = scratch_dir("nan_abort_out");
    TrainOptions opts;
    opts.checkpoint_path = dir + "/model.ckpt";
    opts.checkpoint_every = 1;
    opts.loss_csv_path = dir + "/loss.csv";

    // Run two clean steps first so a good checkpoint exists, then poison.
    Config two = c;
    two.training.warmup_steps = 1;
    two.training.total_steps = 2;
    two.finalize();
    TrainResult warm = train_tsvad_model(model, sessions, two, opts);
    CHECK(warm.steps == 2);
    const std::string good_bytes = slurp(opts.checkpoint_path);

    ParamList params = model.parameters();
    params[0].tensor.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
    TrainOptions abort_opts = opts;
    abort_opts.loss_csv_path = dir + "/loss2.csv";
    TrainResult r = train_tsvad_model(model, sessions, c, abort_opts);
    CHECK(r.nan_abort);
    CHECK(r.steps == 0);
    CHECK(slurp(opts.checkpoint_path) == good_bytes);  // untouched by the abort
    // No data rows made it into the log.
    CHECK(slurp(abort_opts.loss_csv_path) == "step,loss,lr\n");
}

TEST_CASE("concat training pads every chunk to the model capacity") {
    const std::string manifest = make_dataset("concat_run", 2, 12.0, 41);
    Config c = Config::defaults_for(ModelVariant::CONCAT, "toy");
    c.training.seed = 15;
    c.training.batch = 1;
    c.training.chunk_seconds = 4.0;
    c.training.peak_lr = 1e-3;
    c.training.warmup_steps = 2;
    c.training.total_steps = 4;
    c.finalize();
    auto sessions = load_tsvad_sessions(manifest, c);
    TsVadModel model = build_tsvad_model(c);
    TrainResult r = train_tsvad_model(model, sessions, c, TrainOptions{});
    CHECK_FALSE(r.nan_abort);
    CHECK(r.steps == 4);
    CHECK(std::isfinite(r.last_loss));
}

TEST_CASE("inference configs mirror the config sections") {
    Config c = Config::defaults_for(ModelVariant::BLSTM_TIME_TRANS_SPK);
    c.inference.median_taps = 7;
    c.inference.ahc_threshold = 0.3;
    c.inference.chunk_frames = 200;
    c.finalize();
    InferConfig ic = infer_config_from(c);
    CHECK(ic.median_taps == 7);
    CHECK(ic.ahc_threshold == 0.3);
    CHECK(ic.chunk_frames == 200);
    CHECK(ic.features == c.features.config);

    Config e = Config::defaults_for(ModelVariant::EDA_DOT);
    EdaInferConfig ec = eda_infer_config_from(e);
    CHECK(ec.use_dot_matcher);
    CHECK(ec.stack == 15);
    CHECK(ec.subsample == 10);
    Config e2 = Config::defaults_for(ModelVariant::EDA_TSVAD);
    CHECK_FALSE(eda_infer_config_from(e2).use_dot_matcher);
}

TEST_CASE("family mismatches are rejected") {
    Config eda = Config::defaults_for(ModelVariant::EDA_TSVAD, "toy");
    Config ts = Config::defaults_for(ModelVariant::CONCAT, "toy");
    TsVadModel tm = build_tsvad_model(ts);
    EdaTsVadModel em = build_eda_tsvad_model(eda);
    std::vector<TrainSession> none;
    CHECK_THROWS_AS(train_tsvad_model(tm, none, ts, TrainOptions{}), ContractError);
    TrainSession dummy;
    dummy.features = Tensor::zeros({10, 80});
    dummy.labels = Tensor::zeros({10, 1});
    std::vector<TrainSession> one = {dummy};
    CHECK_THROWS_AS(train_tsvad_model(tm, one, eda, TrainOptions{}), ContractError);
    CHECK_THROWS_AS(train_eda_model(em, one, ts, TrainOptions{}), ContractError);
}
