#include "vitssp/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace vitssp {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void bad(const std::string& section, const std::string& key,
                      const std::string& why) {
    throw ConfigError("config [" + section + "] " + key + ": " + why);
}

int64_t to_int(const std::string& section, const std::string& key,
               const std::string& v) {
    try {
        size_t used = 0;
        const int64_t x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        bad(section, key, "expected an integer, got '" + v + "'");
    }
}

uint64_t to_u64(const std::string& section, const std::string& key,
                const std::string& v) {
    try {
        size_t used = 0;
        const uint64_t x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        bad(section, key, "expected an unsigned integer, got '" + v + "'");
    }
}

double to_double(const std::string& section, const std::string& key,
                 const std::string& v) {
    try {
        size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        bad(section, key, "expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& section, const std::string& key,
             const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad(section, key, "expected true/false, got '" + v + "'");
}

void set_augment(AugmentSpec& a, const std::string& section, const std::string& key,
                 const std::string& v) {
    if (key == "resize_to")
        a.resize_to = to_int(section, key, v);
    else if (key == "rotation_deg")
        a.rotation_deg = to_double(section, key, v);
    else if (key == "hflip_prob")
        a.hflip_prob = to_double(section, key, v);
    else if (key == "vflip_prob")
        a.vflip_prob = to_double(section, key, v);
    else if (key == "brightness")
        a.brightness = to_double(section, key, v);
    else if (key == "contrast")
        a.contrast = to_double(section, key, v);
    else if (key == "grayscale_prob")
        a.grayscale_prob = to_double(section, key, v);
    else if (key == "normalize")
        a.normalize = to_bool(section, key, v);
    else if (key == "norm_mean")
        a.norm_mean = to_double(section, key, v);
    else if (key == "norm_std")
        a.norm_std = to_double(section, key, v);
    else
        bad(section, key, "unknown key");
}

void check_augment(const AugmentSpec& a, const std::string& section) {
    auto prob = [&](double p, const char* key) {
        if (p < 0.0 || p > 1.0) bad(section, key, "probability outside [0,1]");
    };
    prob(a.hflip_prob, "hflip_prob");
    prob(a.vflip_prob, "vflip_prob");
    prob(a.grayscale_prob, "grayscale_prob");
    if (a.resize_to < 0) bad(section, "resize_to", "must be >= 0");
    if (a.rotation_deg < 0.0) bad(section, "rotation_deg", "must be >= 0");
    if (a.brightness < 0.0 || a.brightness > 1.0)
        bad(section, "brightness", "must lie in [0,1]");
    if (a.contrast < 0.0 || a.contrast > 1.0)
        bad(section, "contrast", "must lie in [0,1]");
    if (a.normalize && a.norm_std <= 0.0) bad(section, "norm_std", "must be > 0");
}

std::string fmt_f(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

DType parse_precision(const std::string& s) {
    if (s == "f32") return DType::F32;
    if (s == "f64") return DType::F64;
    throw ConfigError("config [data] precision: expected f32 or f64, got '" + s + "'");
}

std::string precision_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

void RunConfig::finalize() {
    pretrain.seed = seed;
    finetune.seed = seed;
    validate();
}

void RunConfig::validate() const {
    // Named [model] checks first so a bad config reports the offending key;
    // model.validate() stays as the backstop for anything not covered here.
    if (model.image_size < 1) throw ConfigError("config [model] image_size: must be >= 1");
    if (model.patch_size < 1) throw ConfigError("config [model] patch_size: must be >= 1");
    if (model.in_channels < 1) throw ConfigError("config [model] in_channels: must be >= 1");
    if (model.embed_dim < 1) throw ConfigError("config [model] embed_dim: must be >= 1");
    if (model.depth < 1) throw ConfigError("config [model] depth: must be >= 1");
    if (model.num_heads < 1) throw ConfigError("config [model] num_heads: must be >= 1");
    if (model.mlp_ratio < 1) throw ConfigError("config [model] mlp_ratio: must be >= 1");
    if (model.image_size % model.patch_size != 0)
        throw ConfigError("config [model] patch_size: must divide image_size");
    if (model.embed_dim % model.num_heads != 0)
        throw ConfigError("config [model] num_heads: must divide embed_dim");
    if (model.drop_rate < 0.0 || model.drop_rate >= 1.0)
        throw ConfigError("config [model] drop_rate: must lie in [0,1)");
    model.validate();
    finetune.validate();
    if (pretrain.batch_size < 1) throw ConfigError("config [pretrain] batch_size: must be >= 1");
    if (pretrain.epochs < 1) throw ConfigError("config [pretrain] epochs: must be >= 1");
    if (pretrain.lr <= 0.0) throw ConfigError("config [pretrain] learning_rate: must be > 0");
    if (pretrain.momentum <= 0.0 || pretrain.momentum >= 1.0)
        throw ConfigError("config [pretrain] momentum: must lie in (0,1)");
    if (pretrain.accumulation_steps < 1)
        throw ConfigError("config [pretrain] accumulation_steps: must be >= 1");
    check_augment(augment_pretrain, "augment.pretrain");
    check_augment(augment_finetune, "augment.finetune");
    if (label_fraction < 0.0 || label_fraction > 1.0)
        throw ConfigError("config [data] label_fraction: must lie in [0,1]");
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    // First pass applies any [model] preset so explicit keys can override it
    // regardless of ordering within the section.
    {
        std::istringstream scan(text);
        std::string l, sec;
        while (std::getline(scan, l)) {
            std::string t = trim(l);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[' && t.back() == ']') {
                sec = trim(t.substr(1, t.size() - 2));
                continue;
            }
            const size_t eq = t.find('=');
            if (eq == std::string::npos) continue;
            if (sec == "model" && trim(t.substr(0, eq)) == "preset")
                cfg.model = ViTConfig::preset(trim(t.substr(eq + 1)));
        }
    }
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section != "pretrain" && section != "finetune" &&
                section != "augment.pretrain" && section != "augment.finetune" &&
                section != "model" && section != "data")
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unknown section [" + section + "]");
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (section.empty())
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": key outside any section");

        if (section == "pretrain") {
            if (key == "batch_size")
                cfg.pretrain.batch_size = to_int(section, key, val);
            else if (key == "learning_rate")
                cfg.pretrain.lr = to_double(section, key, val);
            else if (key == "momentum")
                cfg.pretrain.momentum = to_double(section, key, val);
            else if (key == "epochs")
                cfg.pretrain.epochs = to_int(section, key, val);
            else if (key == "accumulation_steps")
                cfg.pretrain.accumulation_steps = to_int(section, key, val);
            else if (key == "symmetric")
                cfg.pretrain.symmetric = to_bool(section, key, val);
            else
                bad(section, key, "unknown key");
        } else if (section == "finetune") {
            if (key == "batch_size")
                cfg.finetune.batch_size = to_int(section, key, val);
            else if (key == "learning_rate")
                cfg.finetune.lr = to_double(section, key, val);
            else if (key == "epochs")
                cfg.finetune.epochs = to_int(section, key, val);
            else if (key == "dropout")
                cfg.finetune.dropout = to_double(section, key, val);
            else if (key == "weight_decay")
                cfg.finetune.weight_decay = to_double(section, key, val);
            else if (key == "folds")
                cfg.finetune.folds = to_int(section, key, val);
            else if (key == "early_stop_patience")
                cfg.finetune.early_stop_patience =
                    static_cast<int>(to_int(section, key, val));
            else if (key == "scheduler_factor")
                cfg.finetune.scheduler.factor = to_double(section, key, val);
            else if (key == "scheduler_patience")
                cfg.finetune.scheduler.patience =
                    static_cast<int>(to_int(section, key, val));
            else if (key == "scheduler_min_lr")
                cfg.finetune.scheduler.min_lr = to_double(section, key, val);
            else if (key == "head_hidden")
                cfg.finetune.head_hidden = to_int(section, key, val);
            else if (key == "freeze_backbone")
                cfg.finetune.freeze_backbone = to_bool(section, key, val);
            else
                bad(section, key, "unknown key");
        } else if (section == "augment.pretrain") {
            set_augment(cfg.augment_pretrain, section, key, val);
        } else if (section == "augment.finetune") {
            set_augment(cfg.augment_finetune, section, key, val);
        } else if (section == "model") {
            if (key == "preset") {
                // Applied during the pre-scan so later explicit keys win.
            } else if (key == "image_size")
                cfg.model.image_size = to_int(section, key, val);
            else if (key == "patch_size")
                cfg.model.patch_size = to_int(section, key, val);
            else if (key == "in_channels")
                cfg.model.in_channels = to_int(section, key, val);
            else if (key == "embed_dim")
                cfg.model.embed_dim = to_int(section, key, val);
            else if (key == "depth")
                cfg.model.depth = to_int(section, key, val);
            else if (key == "num_heads")
                cfg.model.num_heads = to_int(section, key, val);
            else if (key == "mlp_ratio")
                cfg.model.mlp_ratio = to_int(section, key, val);
            else if (key == "drop_rate")
                cfg.model.drop_rate = to_double(section, key, val);
            else
                bad(section, key, "unknown key");
        } else {  // data
            if (key == "train_path")
                cfg.train_path = val;
            else if (key == "test_path")
                cfg.test_path = val;
            else if (key == "out_dir")
                cfg.out_dir = val;
            else if (key == "seed")
                cfg.seed = to_u64(section, key, val);
            else if (key == "precision")
                cfg.precision = parse_precision(val);
            else if (key == "label_fraction")
                cfg.label_fraction = to_double(section, key, val);
            else
                bad(section, key, "unknown key");
        }
    }
    cfg.finalize();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    const auto& a1 = cfg.augment_pretrain;
    const auto& a2 = cfg.augment_finetune;
    auto augment_block = [&](const char* name, const AugmentSpec& a) {
        out << "[" << name << "]\n"
            << "resize_to = " << a.resize_to << "\n"
            << "rotation_deg = " << fmt_f(a.rotation_deg) << "\n"
            << "hflip_prob = " << fmt_f(a.hflip_prob) << "\n"
            << "vflip_prob = " << fmt_f(a.vflip_prob) << "\n"
            << "brightness = " << fmt_f(a.brightness) << "\n"
            << "contrast = " << fmt_f(a.contrast) << "\n"
            << "grayscale_prob = " << fmt_f(a.grayscale_prob) << "\n"
            << "normalize = " << (a.normalize ? "true" : "false") << "\n"
            << "norm_mean = " << fmt_f(a.norm_mean) << "\n"
            << "norm_std = " << fmt_f(a.norm_std) << "\n\n";
    };
    out << "[pretrain]\n"
        << "batch_size = " << cfg.pretrain.batch_size << "\n"
        << "learning_rate = " << fmt_f(cfg.pretrain.lr) << "\n"
        << "momentum = " << fmt_f(cfg.pretrain.momentum) << "\n"
        << "epochs = " << cfg.pretrain.epochs << "\n"
        << "accumulation_steps = " << cfg.pretrain.accumulation_steps << "\n"
        << "symmetric = " << (cfg.pretrain.symmetric ? "true" : "false") << "\n\n";
    out << "[finetune]\n"
        << "batch_size = " << cfg.finetune.batch_size << "\n"
        << "learning_rate = " << fmt_f(cfg.finetune.lr) << "\n"
        << "epochs = " << cfg.finetune.epochs << "\n"
        << "dropout = " << fmt_f(cfg.finetune.dropout) << "\n"
        << "weight_decay = " << fmt_f(cfg.finetune.weight_decay) << "\n"
        << "folds = " << cfg.finetune.folds << "\n"
        << "early_stop_patience = " << cfg.finetune.early_stop_patience << "\n"
        << "scheduler_factor = " << fmt_f(cfg.finetune.scheduler.factor) << "\n"
        << "scheduler_patience = " << cfg.finetune.scheduler.patience << "\n"
        << "scheduler_min_lr = " << fmt_f(cfg.finetune.scheduler.min_lr) << "\n"
        << "head_hidden = " << cfg.finetune.head_hidden << "\n"
        << "freeze_backbone = " << (cfg.finetune.freeze_backbone ? "true" : "false")
        << "\n\n";
    augment_block("augment.pretrain", a1);
    augment_block("augment.finetune", a2);
    out << "[model]\n"
        << "image_size = " << cfg.model.image_size << "\n"
        << "patch_size = " << cfg.model.patch_size << "\n"
        << "in_channels = " << cfg.model.in_channels << "\n"
        << "embed_dim = " << cfg.model.embed_dim << "\n"
        << "depth = " << cfg.model.depth << "\n"
        << "num_heads = " << cfg.model.num_heads << "\n"
        << "mlp_ratio = " << cfg.model.mlp_ratio << "\n"
        << "drop_rate = " << fmt_f(cfg.model.drop_rate) << "\n\n";
    out << "[data]\n"
        << "train_path = " << cfg.train_path << "\n"
        << "test_path = " << cfg.test_path << "\n"
        << "out_dir = " << cfg.out_dir << "\n"
        << "seed = " << cfg.seed << "\n"
        << "precision = " << precision_name(cfg.precision) << "\n"
        << "label_fraction = " << fmt_f(cfg.label_fraction) << "\n";
    return out.str();
}

}  // namespace vitssp
