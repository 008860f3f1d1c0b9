#include "qaf/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "qaf/errors.hpp"

namespace qaf {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& value) {
    char* end = nullptr;
    double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
    return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as an integer");
    return static_cast<std::uint64_t>(v);
}

std::size_t to_size(const std::string& key, const std::string& value) {
    return static_cast<std::size_t>(to_u64(key, value));
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true" || value == "on") return true;
    if (value == "0" || value == "false" || value == "off") return false;
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a boolean");
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(stripped.substr(0, eq));
        std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw FormatError(origin + ":" + std::to_string(lineno) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError(path + ": cannot open config file");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_kv_text(text, path);
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "seed") {
            synth.seed = to_u64(key, value);
            train.seed = synth.seed;
        } else if (key == "q") {
            synth.num_levels = to_size(key, value);
        } else if (key == "k") {
            synth.codebook_size = to_size(key, value);
        } else if (key == "d_codec") {
            synth.d_codec = to_size(key, value);
        } else if (key == "d_ssl") {
            synth.d_ssl = to_size(key, value);
        } else if (key == "ssl_layers") {
            synth.num_ssl_layers = to_size(key, value);
        } else if (key == "t_min") {
            synth.t_min = to_size(key, value);
        } else if (key == "t_max") {
            synth.t_max = to_size(key, value);
        } else if (key == "train_per_class") {
            synth.train_per_class = to_size(key, value);
        } else if (key == "dev_per_class") {
            synth.dev_per_class = to_size(key, value);
        } else if (key == "eval_per_class") {
            synth.eval_per_class = to_size(key, value);
        } else if (key == "artifact_level") {
            synth.artifact_level = to_size(key, value);
        } else if (key == "artifact_strength") {
            synth.artifact_strength = to_double(key, value);
        } else if (key == "ssl_smoothing") {
            synth.ssl_smoothing = to_size(key, value);
        } else if (key == "noise") {
            synth.noise = to_double(key, value);
        } else if (key == "artifact_enabled") {
            synth.artifact_enabled = to_bool(key, value);
        } else if (key == "learning_rate") {
            train.learning_rate = to_double(key, value);
        } else if (key == "beta1") {
            train.beta1 = to_double(key, value);
        } else if (key == "beta2") {
            train.beta2 = to_double(key, value);
        } else if (key == "epsilon") {
            train.epsilon = to_double(key, value);
        } else if (key == "batch_size") {
            train.batch_size = to_size(key, value);
        } else if (key == "max_epochs") {
            train.max_epochs = to_size(key, value);
        } else if (key == "patience") {
            train.patience = to_size(key, value);
        } else if (key == "tau") {
            train.tau = to_double(key, value);
        } else if (key == "method") {
            train.method = parse_agg_method(value);
        } else if (key == "codec") {
            if (value == "frozen")
                train.codec_trainable = false;
            else if (value == "trainable")
                train.codec_trainable = true;
            else
                throw ConfigError("config key 'codec': expected frozen or trainable, got '" +
                                  value + "'");
        } else if (key == "d_model") {
            d_model = to_size(key, value);
        } else if (key == "hidden") {
            hidden = to_size(key, value);
        } else if (key == "kmeans_iters") {
            kmeans_iters = to_size(key, value);
        } else if (key == "include_zero_codeword") {
            include_zero_codeword = to_bool(key, value);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
}

void RunConfig::validate() const {
    synth.validate();
    train.validate();
    if (d_model < 1) throw ConfigError("d_model must be >= 1");
    if (hidden < 1) throw ConfigError("hidden must be >= 1");
    if (kmeans_iters < 1) throw ConfigError("kmeans_iters must be >= 1");
}

RunConfig RunConfig::from_file(const std::string& path) {
    RunConfig cfg;
    cfg.apply(parse_kv_file(path));
    cfg.validate();
    return cfg;
}

}  // namespace qaf
