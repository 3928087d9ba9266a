#include "diarkit/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace diarkit {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void fail_line(int line, const std::string& msg) {
    throw ContractError("config line " + std::to_string(line) + ": " + msg);
}

int to_int(const std::string& v, int line, const std::string& key) {
    int out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        fail_line(line, key + " expects an integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t to_u64(const std::string& v, int line, const std::string& key) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        fail_line(line, key + " expects an unsigned integer, got '" + v + "'");
    }
    return out;
}

double to_double(const std::string& v, int line, const std::string& key) {
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return out;
    } catch (const std::exception&) {
        fail_line(line, key + " expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& v, int line, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail_line(line, key + " expects true or false, got '" + v + "'");
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

struct RawEntry {
    std::string section;
    std::string key;
    std::string value;
    int line;
};

std::vector<RawEntry> tokenize(const std::string& text) {
    std::vector<RawEntry> entries;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string s = trim(raw);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']' || s.size() < 3) fail_line(line, "malformed section header");
            section = trim(s.substr(1, s.size() - 2));
            if (section != "model" && section != "features" && section != "training" &&
                section != "inference" && section != "paths") {
                fail_line(line, "unknown section [" + section + "]");
            }
            continue;
        }
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos) fail_line(line, "expected key = value, got '" + s + "'");
        if (section.empty()) fail_line(line, "key before any [section] header");
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (key.empty()) fail_line(line, "empty key");
        entries.push_back({section, key, value, line});
    }
    return entries;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ContractError("config: " + msg);
}

void apply_entry(Config& c, const RawEntry& e) {
    const std::string full = e.section + "." + e.key;
    auto as_int = [&] { return to_int(e.value, e.line, full); };
    auto as_double = [&] { return to_double(e.value, e.line, full); };

    if (e.section == "model") {
        TsVadDims& d = c.model.tsvad;
        if (e.key == "variant") {
            c.model.variant = variant_from_string(e.value);
        } else if (e.key == "preset") {
            c.model.preset = e.value;
        } else if (e.key == "jsd_blocks") {
            d.jsd_blocks = as_int();
        } else if (e.key == "max_speakers") {
            d.max_speakers = as_int();
        } else if (e.key == "frontend_channels") {
            d.frontend_channels = as_int();
        } else if (e.key == "frontend_kernel") {
            d.frontend_kernel = as_int();
        } else if (e.key == "frontend_stride1") {
            d.frontend_stride1 = as_int();
        } else if (e.key == "frontend_stride2") {
            d.frontend_stride2 = as_int();
        } else if (e.key == "embed_dim") {
            d.embed_dim = as_int();
        } else if (e.key == "profile_dim") {
            d.profile_dim = as_int();
        } else if (e.key == "isd_proj") {
            d.isd_proj = as_int();
        } else if (e.key == "isd_hidden") {
            d.isd_hidden = as_int();
        } else if (e.key == "isd_out") {
            d.isd_out = as_int();
        } else if (e.key == "time_hidden") {
            d.time_hidden = as_int();
        } else if (e.key == "time_proj") {
            d.time_proj = as_int();
        } else if (e.key == "spk_hidden") {
            d.spk_hidden = as_int();
        } else if (e.key == "spk_proj") {
            d.spk_proj = as_int();
        } else if (e.key == "trans_heads") {
            d.trans_heads = as_int();
        } else if (e.key == "trans_ffn") {
            d.trans_ffn = as_int();
        } else if (e.key == "spk_trans_ffn") {
            d.spk_trans_ffn = as_int();
        } else if (e.key == "concat_hidden") {
            d.concat_hidden = as_int();
        } else if (e.key == "concat_proj") {
            d.concat_proj = as_int();
        } else if (e.key == "time_positional_encoding") {
            d.time_positional_encoding = to_bool(e.value, e.line, full);
        } else if (e.key == "eend_model_dim") {
            c.model.eend.model_dim = as_int();
        } else if (e.key == "eend_heads") {
            c.model.eend.heads = as_int();
        } else if (e.key == "eend_layers") {
            c.model.eend.layers = as_int();
        } else if (e.key == "eend_ffn_dim") {
            c.model.eend.ffn_dim = as_int();
        } else {
            fail_line(e.line, "unknown key " + full);
        }
    } else if (e.section == "features") {
        if (e.key == "sample_rate") {
            c.features.config.sample_rate = as_int();
        } else if (e.key == "window_ms") {
            c.features.config.window_ms = as_double();
        } else if (e.key == "hop_ms") {
            c.features.config.hop_ms = as_double();
        } else if (e.key == "mel_bins") {
            c.features.config.mel_bins = as_int();
        } else if (e.key == "stack") {
            c.features.stack = as_int();
        } else if (e.key == "subsample") {
            c.features.subsample = as_int();
        } else {
            fail_line(e.line, "unknown key " + full);
        }
    } else if (e.section == "training") {
        if (e.key == "peak_lr") {
            c.training.peak_lr = as_double();
        } else if (e.key == "warmup_steps") {
            c.training.warmup_steps = as_int();
        } else if (e.key == "total_steps") {
            c.training.total_steps = as_int();
        } else if (e.key == "batch") {
            c.training.batch = as_int();
        } else if (e.key == "chunk_seconds") {
            c.training.chunk_seconds = as_double();
        } else if (e.key == "seed") {
            c.training.seed = to_u64(e.value, e.line, full);
        } else {
            fail_line(e.line, "unknown key " + full);
        }
    } else if (e.section == "inference") {
        if (e.key == "binarize_threshold") {
            c.inference.binarize_threshold = as_double();
        } else if (e.key == "median_taps") {
            c.inference.median_taps = as_int();
        } else if (e.key == "collar") {
            c.inference.collar = as_double();
        } else if (e.key == "ahc_threshold") {
            c.inference.ahc_threshold = as_double();
        } else if (e.key == "min_profile_dur") {
            c.inference.min_profile_dur = as_double();
        } else if (e.key == "vad_hangover") {
            c.inference.vad_hangover = as_int();
        } else if (e.key == "chunk_frames") {
            c.inference.chunk_frames = as_int();
        } else {
            fail_line(e.line, "unknown key " + full);
        }
    } else {  // paths
        if (e.key == "train_manifest") {
            c.paths.train_manifest = e.value;
        } else if (e.key == "eval_manifest") {
            c.paths.eval_manifest = e.value;
        } else if (e.key == "checkpoint") {
            c.paths.checkpoint = e.value;
        } else if (e.key == "out_dir") {
            c.paths.out_dir = e.value;
        } else {
            fail_line(e.line, "unknown key " + full);
        }
    }
}

}  // namespace

std::string to_string(ModelVariant v) {
    switch (v) {
        case ModelVariant::CONCAT: return "concat";
        case ModelVariant::BLSTM_BLSTM: return "blstm_blstm";
        case ModelVariant::TRANS_TRANS: return "trans_trans";
        case ModelVariant::BLSTM_TIME_TRANS_SPK: return "blstm_time_trans_spk";
        case ModelVariant::EDA_DOT: return "eda_dot";
        case ModelVariant::EDA_TSVAD: return "eda_tsvad";
    }
    throw ContractError("config: invalid variant enum value");
}

ModelVariant variant_from_string(const std::string& s) {
    if (s == "concat") return ModelVariant::CONCAT;
    if (s == "blstm_blstm") return ModelVariant::BLSTM_BLSTM;
    if (s == "trans_trans") return ModelVariant::TRANS_TRANS;
    if (s == "blstm_time_trans_spk") return ModelVariant::BLSTM_TIME_TRANS_SPK;
    if (s == "eda_dot") return ModelVariant::EDA_DOT;
    if (s == "eda_tsvad") return ModelVariant::EDA_TSVAD;
    throw ContractError(
        "config: unknown model.variant '" + s +
        "' (expected concat | blstm_blstm | trans_trans | blstm_time_trans_spk | "
        "eda_dot | eda_tsvad)");
}

bool is_eda_variant(ModelVariant v) {
    return v == ModelVariant::EDA_DOT || v == ModelVariant::EDA_TSVAD;
}

JsdKind jsd_kind_for(ModelVariant v) {
    switch (v) {
        case ModelVariant::CONCAT: return JsdKind::CONCAT;
        case ModelVariant::BLSTM_BLSTM: return JsdKind::BLSTM_BLSTM;
        case ModelVariant::TRANS_TRANS: return JsdKind::TRANS_TRANS;
        case ModelVariant::BLSTM_TIME_TRANS_SPK: return JsdKind::BLSTM_TIME_TRANS_SPK;
        default:
            throw ContractError("config: variant " + to_string(v) + " has no JSD kind");
    }
}

Config Config::defaults_for(ModelVariant v, const std::string& preset) {
    Config c;
    c.model.variant = v;
    c.model.preset = preset;
    const bool toy = preset == "toy";
    c.model.tsvad = toy ? TsVadDims::toy() : TsVadDims::full();
    c.model.eend = toy ? EendDims::toy() : EendDims::full();
    if (is_eda_variant(v)) {
        c.features.config = FeatureConfig::attractor_path();
        c.training.peak_lr = 5e-5;
        c.training.warmup_steps = 27000;
        c.training.total_steps = 230000;
        c.training.batch = 36;
    } else {
        c.features.config = FeatureConfig::target_speaker_path();
        c.training.peak_lr = 2e-4;
        c.training.warmup_steps = 20000;
        c.training.total_steps = 200000;
        c.training.batch = 32;
    }
    c.finalize();
    return c;
}

void Config::finalize() {
    require(model.preset == "full" || model.preset == "toy",
            "model.preset must be full or toy, got '" + model.preset + "'");
    features.config.validate();
    require(features.stack >= 1 && features.stack % 2 == 1,
            "features.stack must be odd and positive");
    require(features.subsample >= 1, "features.subsample must be positive");

    // Coupled dims: the front ends read whatever the feature extractor emits.
    model.tsvad.mel_bins = features.config.mel_bins;
    model.eend.input_dim = features.stack * features.config.mel_bins;

    TsVadDims& d = model.tsvad;
    require(d.jsd_blocks == 1 || d.jsd_blocks == 2, "model.jsd_blocks must be 1 or 2");
    require(d.max_speakers >= 1, "model.max_speakers must be positive");
    for (int dim : {d.frontend_channels, d.frontend_kernel, d.frontend_stride1,
                    d.frontend_stride2, d.embed_dim, d.profile_dim, d.isd_proj, d.isd_hidden,
                    d.isd_out, d.time_hidden, d.time_proj, d.spk_hidden, d.spk_proj,
                    d.trans_heads, d.trans_ffn, d.spk_trans_ffn, d.concat_hidden,
                    d.concat_proj}) {
        require(dim >= 1, "model layer dims must be positive");
    }
    require(model.eend.model_dim >= 1 && model.eend.heads >= 1 && model.eend.layers >= 1 &&
                model.eend.ffn_dim >= 1,
            "model eend dims must be positive");
    require(model.eend.model_dim % model.eend.heads == 0,
            "model.eend_model_dim must be divisible by model.eend_heads");

    require(training.peak_lr > 0.0 && std::isfinite(training.peak_lr),
            "training.peak_lr must be positive");
    require(training.warmup_steps >= 1, "training.warmup_steps must be positive");
    require(training.total_steps >= training.warmup_steps,
            "training.total_steps must be >= training.warmup_steps");
    require(training.batch >= 1, "training.batch must be positive");
    require(training.chunk_seconds > 0.0, "training.chunk_seconds must be positive");

    require(inference.binarize_threshold >= 0.0 && inference.binarize_threshold <= 1.0,
            "inference.binarize_threshold must be in [0, 1]");
    require(inference.median_taps >= 1 && inference.median_taps % 2 == 1,
            "inference.median_taps must be odd and positive");
    require(inference.collar >= 0.0, "inference.collar must be non-negative");
    require(inference.ahc_threshold >= 0.0, "inference.ahc_threshold must be non-negative");
    require(inference.min_profile_dur >= 0.0,
            "inference.min_profile_dur must be non-negative");
    require(inference.vad_hangover >= 0, "inference.vad_hangover must be non-negative");
    require(inference.chunk_frames >= 1, "inference.chunk_frames must be positive");
}

Config parse_config_text(const std::string& text) {
    const std::vector<RawEntry> entries = tokenize(text);

    // Pass 1: variant and preset select the default block everything else
    // lands on.
    ModelVariant variant = ModelVariant::BLSTM_TIME_TRANS_SPK;
    std::string preset = "full";
    for (const RawEntry& e : entries) {
        if (e.section == "model" && e.key == "variant") {
            variant = variant_from_string(e.value);
        } else if (e.section == "model" && e.key == "preset") {
            preset = e.value;
        }
    }
    if (preset != "full" && preset != "toy") {
        throw ContractError("config: model.preset must be full or toy, got '" + preset + "'");
    }

    Config c = Config::defaults_for(variant, preset);
    for (const RawEntry& e : entries) apply_entry(c, e);
    c.finalize();
    return c;
}

Config parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

TsVadModel build_tsvad_model(const Config& config) {
    if (is_eda_variant(config.model.variant)) {
        throw ContractError("config: variant " + to_string(config.model.variant) +
                            " is not a target-speaker model");
    }
    return TsVadModel::create(config.model.tsvad, jsd_kind_for(config.model.variant),
                              config.training.seed);
}

EdaTsVadModel build_eda_tsvad_model(const Config& config) {
    if (!is_eda_variant(config.model.variant)) {
        throw ContractError("config: variant " + to_string(config.model.variant) +
                            " is not an attractor model");
    }
    return EdaTsVadModel::create(config.model.eend, config.model.tsvad,
                                 config.training.seed);
}

std::string serialize_config(const Config& config) {
    std::ostringstream out;
    const TsVadDims& d = config.model.tsvad;
    out << "[model]\n";
    out << "variant = " << to_string(config.model.variant) << "\n";
    out << "preset = " << config.model.preset << "\n";
    out << "jsd_blocks = " << d.jsd_blocks << "\n";
    out << "max_speakers = " << d.max_speakers << "\n";
    out << "frontend_channels = " << d.frontend_channels << "\n";
    out << "frontend_kernel = " << d.frontend_kernel << "\n";
    out << "frontend_stride1 = " << d.frontend_stride1 << "\n";
    out << "frontend_stride2 = " << d.frontend_stride2 << "\n";
    out << "embed_dim = " << d.embed_dim << "\n";
    out << "profile_dim = " << d.profile_dim << "\n";
    out << "isd_proj = " << d.isd_proj << "\n";
    out << "isd_hidden = " << d.isd_hidden << "\n";
    out << "isd_out = " << d.isd_out << "\n";
    out << "time_hidden = " << d.time_hidden << "\n";
    out << "time_proj = " << d.time_proj << "\n";
    out << "spk_hidden = " << d.spk_hidden << "\n";
    out << "spk_proj = " << d.spk_proj << "\n";
    out << "trans_heads = " << d.trans_heads << "\n";
    out << "trans_ffn = " << d.trans_ffn << "\n";
    out << "spk_trans_ffn = " << d.spk_trans_ffn << "\n";
    out << "concat_hidden = " << d.concat_hidden << "\n";
    out << "concat_proj = " << d.concat_proj << "\n";
    out << "time_positional_encoding = "
        << (d.time_positional_encoding ? "true" : "false") << "\n";
    out << "eend_model_dim = " << config.model.eend.model_dim << "\n";
    out << "eend_heads = " << config.model.eend.heads << "\n";
    out << "eend_layers = " << config.model.eend.layers << "\n";
    out << "eend_ffn_dim = " << config.model.eend.ffn_dim << "\n";
    out << "\n[features]\n";
    out << "sample_rate = " << config.features.config.sample_rate << "\n";
    out << "window_ms = " << format_double(config.features.config.window_ms) << "\n";
    out << "hop_ms = " << format_double(config.features.config.hop_ms) << "\n";
    out << "mel_bins = " << config.features.config.mel_bins << "\n";
    out << "stack = " << config.features.stack << "\n";
    out << "subsample = " << config.features.subsample << "\n";
    out << "\n[training]\n";
    out << "peak_lr = " << format_double(config.training.peak_lr) << "\n";
    out << "warmup_steps = " << config.training.warmup_steps << "\n";
    out << "total_steps = " << config.training.total_steps << "\n";
    out << "batch = " << config.training.batch << "\n";
    out << "chunk_seconds = " << format_double(config.training.chunk_seconds) << "\n";
    out << "seed = " << config.training.seed << "\n";
    out << "\n[inference]\n";
    out << "binarize_threshold = " << format_double(config.inference.binarize_threshold)
        << "\n";
    out << "median_taps = " << config.inference.median_taps << "\n";
    out << "collar = " << format_double(config.inference.collar) << "\n";
    out << "ahc_threshold = " << format_double(config.inference.ahc_threshold) << "\n";
    out << "min_profile_dur = " << format_double(config.inference.min_profile_dur) << "\n";
    out << "vad_hangover = " << config.inference.vad_hangover << "\n";
    out << "chunk_frames = " << config.inference.chunk_frames << "\n";
    out << "\n[paths]\n";
    out << "train_manifest = " << config.paths.train_manifest << "\n";
    out << "eval_manifest = " << config.paths.eval_manifest << "\n";
    out << "checkpoint = " << config.paths.checkpoint << "\n";
    out << "out_dir = " << config.paths.out_dir << "\n";
    return out.str();
}

}  // namespace diarkit
