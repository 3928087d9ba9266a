// diarkit: desk-scale speaker-diarization toolkit.
//
// Subcommands: simulate | train | infer | score | selftest. Exit codes:
// 0 success, 2 usage or configuration error, 3 I/O error, 4 numerical
// failure. The DIARKIT_THREADS environment variable caps intra-op
// parallelism; every command is deterministic given its config and seeds.

#include <CLI11.hpp>

#include "diarkit/checkpoint.hpp"
#include "diarkit/config.hpp"
#include "diarkit/pipeline.hpp"
#include "diarkit/score.hpp"
#include "diarkit/simulate.hpp"
#include "diarkit/train.hpp"

#include <functional>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace diarkit;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

Config load_config_or_defaults(const std::string& path) {
    if (path.empty()) return Config::defaults_for(ModelVariant::BLSTM_TIME_TRANS_SPK);
    return parse_config(path);
}

void require_readable(const std::string& path, const std::string& what) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError(what + ": cannot open '" + path + "'");
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string config_path;
    std::string out_dir;
    int sessions = 10;
    int speakers_min = 2;
    int speakers_max = 3;
    double duration = 60.0;
    double overlap = 0.2;
    double snr_db = 20.0;
    bool no_noise = false;
    std::optional<std::uint64_t> seed;
};

int run_simulate(const SimulateArgs& args) {
    Config config = load_config_or_defaults(args.config_path);
    DatasetSpec spec;
    spec.n_sessions = args.sessions;
    spec.min_speakers = args.speakers_min;
    spec.max_speakers = args.speakers_max;
    spec.duration_s = args.duration;
    spec.overlap_target = args.overlap;
    spec.snr_db = args.snr_db;
    spec.add_noise = !args.no_noise;
    spec.sample_rate = config.features.config.sample_rate;
    spec.seed = args.seed.value_or(config.training.seed);

    DatasetResult result = build_dataset(args.out_dir, spec);
    for (const ManifestEntry& entry : read_manifest(result.manifest_path)) {
        const double realized = overlap_ratio(read_rttm_file(entry.rttm_path));
        std::cout << entry.id << " realized_overlap " << realized << "\n";
    }
    std::cout << "manifest " << result.manifest_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::string manifest;
    std::string out_checkpoint;
    std::string loss_csv;
    int checkpoint_every = 0;
    std::optional<int> steps;
    std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& args) {
    Config config = parse_config(args.config_path);
    if (args.seed) config.training.seed = *args.seed;
    if (args.steps) config.training.total_steps = *args.steps;
    config.finalize();

    const std::string manifest =
        args.manifest.empty() ? config.paths.train_manifest : args.manifest;
    if (manifest.empty()) {
        throw ContractError("train: pass --manifest or set paths.train_manifest");
    }
    require_readable(manifest, "train");
    std::string out = args.out_checkpoint.empty() ? config.paths.checkpoint
                                                  : args.out_checkpoint;
    if (out.empty()) throw ContractError("train: pass --out or set paths.checkpoint");

    TrainOptions opts;
    opts.checkpoint_path = out;
    opts.checkpoint_every = args.checkpoint_every;
    opts.loss_csv_path = args.loss_csv.empty() ? out + ".loss.csv" : args.loss_csv;

    TrainResult result;
    if (is_eda_variant(config.model.variant)) {
        auto sessions = load_eda_sessions(manifest, config);
        EdaTsVadModel model = build_eda_tsvad_model(config);
        result = train_eda_model(model, sessions, config, opts);
    } else {
        auto sessions = load_tsvad_sessions(manifest, config);
        TsVadModel model = build_tsvad_model(config);
        result = train_tsvad_model(model, sessions, config, opts);
    }
    if (result.nan_abort) {
        std::cerr << "error: non-finite loss after step " << result.steps
                  << "; last saved checkpoint retained\n";
        return kExitNumerical;
    }
    std::cout << "steps " << result.steps << "\n";
    std::cout << "first_loss " << result.first_loss << "\n";
    std::cout << "last_loss " << result.last_loss << "\n";
    std::cout << "checkpoint " << out << "\n";
    std::cout << "loss_csv " << opts.loss_csv_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferArgs {
    std::string config_path;
    std::string checkpoint;
    std::string audio;
    std::string manifest;
    std::string out_rttm;
    std::string profiles_path;
    bool no_first_pass = false;
};

// Profile file: one speaker per non-empty line, `<name> <v0> <v1> ...`,
// every row the same width.
std::pair<Tensor, std::vector<std::string>> read_profile_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("infer: cannot open profile file '" + path + "'");
    std::vector<std::string> names;
    std::vector<double> values;
    std::size_t width = 0;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream row(line);
        std::string name;
        if (!(row >> name)) continue;
        std::vector<double> vals;
        double v = 0.0;
        while (row >> v) vals.push_back(v);
        if (!row.eof()) {
            throw ContractError("profile file line " + std::to_string(line_no) +
                                ": non-numeric value");
        }
        if (vals.empty()) {
            throw ContractError("profile file line " + std::to_string(line_no) +
                                ": no values after speaker name");
        }
        if (width == 0) width = vals.size();
        if (vals.size() != width) {
            throw ContractError("profile file line " + std::to_string(line_no) +
                                ": expected " + std::to_string(width) + " values");
        }
        names.push_back(std::move(name));
        values.insert(values.end(), vals.begin(), vals.end());
    }
    if (names.empty()) throw ContractError("profile file '" + path + "' has no rows");
    Tensor profiles = Tensor::from_data(
        {static_cast<int>(names.size()), static_cast<int>(width)}, std::move(values));
    return {profiles, names};
}

int run_infer(const InferArgs& args) {
    Config config = parse_config(args.config_path);
    const std::string ckpt_path =
        args.checkpoint.empty() ? config.paths.checkpoint : args.checkpoint;
    if (ckpt_path.empty()) throw ContractError("infer: pass --checkpoint or set paths.checkpoint");
    CheckpointData ckpt = load_checkpoint(ckpt_path);
    if (ckpt.config.model.variant != config.model.variant) {
        throw ContractError("infer: checkpoint variant " +
                            to_string(ckpt.config.model.variant) +
                            " does not match config variant " +
                            to_string(config.model.variant));
    }

    std::vector<std::pair<std::string, std::string>> inputs;  // (session id, wav path)
    if (!args.audio.empty()) {
        inputs.emplace_back(std::filesystem::path(args.audio).stem().string(), args.audio);
    } else {
        const std::string manifest =
            args.manifest.empty() ? config.paths.eval_manifest : args.manifest;
        if (manifest.empty()) {
            throw ContractError("infer: pass --audio, --manifest, or set paths.eval_manifest");
        }
        for (const ManifestEntry& e : read_manifest(manifest)) {
            inputs.emplace_back(e.id, e.wav_path);
        }
    }

    std::vector<RttmSegment> all;
    if (is_eda_variant(config.model.variant)) {
        if (args.no_first_pass || !args.profiles_path.empty()) {
            throw ContractError(
                "infer: --no-first-pass/--profiles apply only to TS-VAD variants");
        }
        EdaTsVadModel model = build_eda_tsvad_model(config);
        ParamList params = model.parameters();
        load_into(params, ckpt);
        const EdaInferConfig infer_cfg = eda_infer_config_from(config);
        for (const auto& [id, wav_path] : inputs) {
            require_readable(wav_path, "infer");
            auto segs = infer_session_eda(read_wav(wav_path), model, infer_cfg, id);
            all.insert(all.end(), segs.begin(), segs.end());
        }
    } else {
        if (args.no_first_pass && args.profiles_path.empty()) {
            throw ContractError("infer: --no-first-pass requires --profiles <path>");
        }
        TsVadModel model = build_tsvad_model(config);
        ParamList params = model.parameters();
        load_into(params, ckpt);
        const InferConfig infer_cfg = infer_config_from(config);
        if (!args.profiles_path.empty()) {
            const auto [profiles, names] = read_profile_file(args.profiles_path);
            for (const auto& [id, wav_path] : inputs) {
                require_readable(wav_path, "infer");
                auto segs = infer_session_with_profiles(read_wav(wav_path), model,
                                                        profiles, names, infer_cfg, id);
                all.insert(all.end(), segs.begin(), segs.end());
            }
        } else {
            for (const auto& [id, wav_path] : inputs) {
                require_readable(wav_path, "infer");
                auto segs = infer_session(read_wav(wav_path), model, infer_cfg, id);
                all.insert(all.end(), segs.begin(), segs.end());
            }
        }
    }
    write_rttm_file(args.out_rttm, all);
    std::cout << "segments " << all.size() << "\n";
    std::cout << "rttm " << args.out_rttm << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreArgs {
    std::string config_path;
    std::string ref_path;
    std::string hyp_path;
    std::string out_path;
    std::optional<double> collar;
    bool per_count = false;
};

int run_score(const ScoreArgs& args) {
    double collar = 0.25;
    if (!args.config_path.empty()) {
        collar = parse_config(args.config_path).inference.collar;
    }
    if (args.collar) collar = *args.collar;
    if (collar < 0.0) throw ContractError("score: collar must be non-negative");

    require_readable(args.ref_path, "score");
    require_readable(args.hyp_path, "score");
    const std::vector<RttmSegment> ref = read_rttm_file(args.ref_path);
    const std::vector<RttmSegment> hyp = read_rttm_file(args.hyp_path);
    DerReport report = compute_der(ref, hyp, collar);
    const std::string text =
        format_der_report(report, args.per_count ? bucket_rule_per_count : bucket_rule_wide);
    std::cout << text;
    if (!args.out_path.empty()) {
        std::ofstream out(args.out_path, std::ios::trunc);
        if (!out) throw IoError("score: cannot write '" + args.out_path + "'");
        out << text;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

int run_selftest() {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok) {
        std::cout << "selftest: " << name << (ok ? " ok" : " FAILED") << "\n";
        if (!ok) ++failures;
    };

    {
        Rng rng(1);
        Tensor w = rand_normal({6, 4}, 0.0, 0.5, rng, true);
        Tensor x = rand_normal({3, 6}, 0.0, 1.0, rng);
        const double err = grad_check(
            [&](const Tensor& p) { return sum_all(sigmoid(matmul(x, p))); }, w);
        check("gradients", err < 1e-4);
    }
    {
        std::vector<RttmSegment> ref = {{"s", 0.0, 10.0, "a"}};
        std::vector<RttmSegment> hyp = {{"s", 0.0, 10.0, "x"}};
        DerReport same = compute_der(ref, hyp, 0.0);
        std::vector<RttmSegment> off = {{"s", 0.0, 9.0, "x"}};
        DerReport miss = compute_der(ref, off, 0.0);
        check("scorer", std::abs(same.total.der()) < 1e-12 &&
                            std::abs(miss.total.der() - 0.1) < 1e-9);
    }
    {
        Config cfg = Config::defaults_for(ModelVariant::BLSTM_TIME_TRANS_SPK, "toy");
        TsVadModel model = build_tsvad_model(cfg);
        ParamList params = model.parameters();
        CheckpointData data = decode_checkpoint(encode_checkpoint(params, cfg));
        TsVadModel other = build_tsvad_model(cfg);
        ParamList other_params = other.parameters();
        load_into(other_params, data);
        NoGradGuard guard;
        Rng rng(3);
        Tensor feats = rand_normal({32, cfg.features.config.mel_bins}, 0.0, 0.3, rng);
        Tensor profiles = rand_normal({2, cfg.model.tsvad.profile_dim}, 0.0, 0.3, rng);
        Tensor a = tsvad_forward(feats, profiles, model);
        Tensor b = tsvad_forward(feats, profiles, other);
        bool same = a.shape == b.shape;
        for (std::size_t i = 0; same && i < a.numel(); ++i) same = a.at(i) == b.at(i);
        check("checkpoint", same);
    }
    {
        ConversationSpec spec;
        spec.duration_s = 4.0;
        spec.seed = 7;
        SimulatedConversation one = mix_conversation(spec, "t");
        SimulatedConversation two = mix_conversation(spec, "t");
        check("simulation", one.audio.samples == two.audio.samples &&
                                !one.reference.empty());
    }
    if (failures > 0) {
        std::cerr << "selftest: " << failures << " check(s) failed\n";
        return kExitNumerical;
    }
    std::cout << "selftest: all checks passed\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale speaker diarization toolkit"};
    app.require_subcommand(1);
    int jobs = 1;  // accepted as an upper bound; sessions are processed in order
    app.add_option("--jobs", jobs, "maximum parallel sessions")->check(CLI::PositiveNumber);

    SimulateArgs sim;
    CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
    simulate->add_option("--config", sim.config_path, "config file");
    simulate->add_option("--out", sim.out_dir, "output directory")->required();
    simulate->add_option("--sessions", sim.sessions, "number of sessions");
    simulate->add_option("--speakers-min", sim.speakers_min, "minimum speakers per session");
    simulate->add_option("--speakers-max", sim.speakers_max, "maximum speakers per session");
    simulate->add_option("--duration", sim.duration, "session length in seconds");
    simulate->add_option("--overlap", sim.overlap, "target overlap ratio");
    simulate->add_option("--snr", sim.snr_db, "noise SNR in dB");
    simulate->add_flag("--no-noise", sim.no_noise, "disable background noise");
    std::uint64_t sim_seed = 0;
    CLI::Option* sim_seed_opt = simulate->add_option("--seed", sim_seed, "dataset seed");

    TrainArgs tr;
    CLI::App* train = app.add_subcommand("train", "train a model from a manifest");
    train->add_option("--config", tr.config_path, "config file")->required();
    train->add_option("--manifest", tr.manifest, "training manifest");
    train->add_option("--out", tr.out_checkpoint, "output checkpoint path");
    train->add_option("--loss-csv", tr.loss_csv, "loss log path (default: <out>.loss.csv)");
    train->add_option("--checkpoint-every", tr.checkpoint_every,
                      "also save every N steps");
    int tr_steps = 0;
    CLI::Option* tr_steps_opt =
        train->add_option("--steps", tr_steps, "override training.total_steps");
    std::uint64_t tr_seed = 0;
    CLI::Option* tr_seed_opt = train->add_option("--seed", tr_seed, "override training.seed");

    InferArgs inf;
    CLI::App* infer = app.add_subcommand("infer", "diarize audio with a checkpoint");
    infer->add_option("--config", inf.config_path, "config file")->required();
    infer->add_option("--checkpoint", inf.checkpoint, "model checkpoint");
    infer->add_option("--audio", inf.audio, "single wav file");
    infer->add_option("--manifest", inf.manifest, "manifest of sessions");
    infer->add_option("--out", inf.out_rttm, "output segment file")->required();
    infer->add_option("--profiles", inf.profiles_path,
                      "external speaker profiles (skips the first pass)");
    infer->add_flag("--no-first-pass", inf.no_first_pass,
                    "disable the clustering first pass (requires --profiles)");

    ScoreArgs sc;
    CLI::App* score = app.add_subcommand("score", "score hypothesis segments");
    score->add_option("--config", sc.config_path, "config file");
    score->add_option("--ref", sc.ref_path, "reference segments")->required();
    score->add_option("--hyp", sc.hyp_path, "hypothesis segments")->required();
    score->add_option("--out", sc.out_path, "also write the report here");
    double sc_collar = 0.25;
    CLI::Option* sc_collar_opt = score->add_option("--collar", sc_collar, "collar in seconds");
    score->add_flag("--per-count", sc.per_count,
                    "bucket by exact speaker count instead of 1-10 / 11+");

    CLI::App* selftest = app.add_subcommand("selftest", "run the built-in sanity battery");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (sim_seed_opt->count() > 0) sim.seed = sim_seed;
    if (tr_steps_opt->count() > 0) tr.steps = tr_steps;
    if (tr_seed_opt->count() > 0) tr.seed = tr_seed;
    if (sc_collar_opt->count() > 0) sc.collar = sc_collar;

    if (simulate->parsed()) return guarded([&] { return run_simulate(sim); });
    if (train->parsed()) return guarded([&] { return run_train(tr); });
    if (infer->parsed()) return guarded([&] { return run_infer(inf); });
    if (score->parsed()) return guarded([&] { return run_score(sc); });
    if (selftest->parsed()) return guarded([&] { return run_selftest(); });
    return kExitUsage;
}
