#pragma once

#include <map>
#include <string>
#include <vector>

#include "qaf/synthdata.hpp"
#include "qaf/training.hpp"

namespace qaf {

// Plain-text config: one `key=value` per line, `#` comments, blank lines
// ignored. Unknown keys are hard errors.
std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin);
std::map<std::string, std::string> parse_kv_file(const std::string& path);

// Union of the generator, trainer and model-shape settings used by the CLI.
struct RunConfig {
    SynthConfig synth;
    TrainConfig train;
    std::size_t d_model = 32;
    std::size_t hidden = 32;
    std::size_t kmeans_iters = 25;
    bool include_zero_codeword = true;

    // Applies key=value pairs on top of the current values; throws
    // ConfigError on unknown keys or unparseable values.
    void apply(const std::map<std::string, std::string>& kv);
    void validate() const;

    static RunConfig from_file(const std::string& path);
};

}  // namespace qaf
