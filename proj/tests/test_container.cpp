#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "qaf/config.hpp"
#include "qaf/qaf1.hpp"
#include "test_util.hpp"

using namespace qaf;
using qaf::test::random_matrix;
using qaf::test::random_stack;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("container round-trips mixed f32/u32 records exactly") {
    Rng rng(501);
    std::vector<TensorRecord> records;
    records.push_back(TensorRecord::from_matrix("weights", random_matrix(rng, 3, 4)));
    records.push_back(TensorRecord::from_vector("bias", {0.25, -1.5, 3.0}));
    records.push_back(TensorRecord::from_scalar("tau", 0.7));
    records.push_back(TensorRecord::from_u32("codes", {0, 7, 42, 4294967295u}));

    write_container("container_rt.qaf1", records);
    std::vector<TensorRecord> back = read_container("container_rt.qaf1");
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].name == records[i].name);
        CHECK(back[i].dtype == records[i].dtype);
        CHECK(back[i].dims == records[i].dims);
        CHECK(back[i].f32 == records[i].f32);
        CHECK(back[i].u32 == records[i].u32);
    }

    write_container("container_rt2.qaf1", back);
    CHECK(slurp("container_rt.qaf1") == slurp("container_rt2.qaf1"));
    std::remove("container_rt.qaf1");
    std::remove("container_rt2.qaf1");
}

TEST_CASE("container rejects malformed files") {
    Rng rng(503);
    std::vector<TensorRecord> records = {TensorRecord::from_matrix("m", random_matrix(rng, 2, 2))};
    write_container("container_bad.qaf1", records);
    std::string good = slurp("container_bad.qaf1");

    SUBCASE("bad magic") {
        std::string bytes = good;
        bytes[0] = 'X';
        spit("container_bad.qaf1", bytes);
        CHECK_THROWS_AS(read_container("container_bad.qaf1"), FormatError);
    }
    SUBCASE("unsupported version") {
        std::string bytes = good;
        bytes[4] = 9;
        spit("container_bad.qaf1", bytes);
        CHECK_THROWS_AS(read_container("container_bad.qaf1"), FormatError);
    }
    SUBCASE("truncated payload") {
        spit("container_bad.qaf1", good.substr(0, good.size() - 3));
        CHECK_THROWS_AS(read_container("container_bad.qaf1"), FormatError);
    }
    SUBCASE("trailing bytes") {
        spit("container_bad.qaf1", good + "junk");
        CHECK_THROWS_AS(read_container("container_bad.qaf1"), FormatError);
    }
    SUBCASE("unknown dtype") {
        std::string bytes = good;
        // magic(4) + version(2) + count(2) + name_len(1) + name(1) -> dtype at 10
        bytes[10] = 5;
        spit("container_bad.qaf1", bytes);
        CHECK_THROWS_AS(read_container("container_bad.qaf1"), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_container("does_not_exist.qaf1"), FormatError);
    }
    std::remove("container_bad.qaf1");
}

TEST_CASE("stack save/load preserves codewords at stored precision") {
    Rng rng(509);
    QuantizerStack stack = random_stack(rng, 3, 4, 5, /*zero_codeword=*/true);
    save_stack(stack, "stack_rt.qaf1");
    QuantizerStack loaded = load_stack("stack_rt.qaf1");
    CHECK(loaded.zero_codeword == stack.zero_codeword);
    REQUIRE(loaded.num_levels() == stack.num_levels());
    for (std::size_t q = 0; q < stack.num_levels(); ++q)
        for (std::size_t i = 0; i < stack.levels[q].codewords.size(); ++i)
            CHECK(loaded.levels[q].codewords.data()[i] ==
                  static_cast<double>(static_cast<float>(stack.levels[q].codewords.data()[i])));
    std::remove("stack_rt.qaf1");
}

TEST_CASE("kv config parsing: comments, blanks, trimming, errors") {
    auto kv = parse_kv_text("# comment\n\n  key = value \nempty=\n", "inline");
    CHECK(kv.at("key") == "value");
    CHECK(kv.at("empty").empty());
    CHECK_THROWS_AS(parse_kv_text("not a pair\n", "inline"), FormatError);
    CHECK_THROWS_AS(parse_kv_text("=value\n", "inline"), FormatError);
}

TEST_CASE("RunConfig rejects unknown keys by name") {
    RunConfig cfg;
    bool threw = false;
    try {
        cfg.apply({{"learnig_rate", "0.1"}});
    } catch (const ConfigError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("learnig_rate") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("RunConfig parses and validates the full key set") {
    RunConfig cfg;
    cfg.apply({{"seed", "9"},
               {"q", "3"},
               {"k", "6"},
               {"d_codec", "4"},
               {"d_ssl", "8"},
               {"ssl_layers", "2"},
               {"t_min", "5"},
               {"t_max", "9"},
               {"train_per_class", "10"},
               {"dev_per_class", "4"},
               {"eval_per_class", "4"},
               {"artifact_level", "2"},
               {"artifact_strength", "0.75"},
               {"ssl_smoothing", "4"},
               {"noise", "0.1"},
               {"artifact_enabled", "true"},
               {"learning_rate", "0.01"},
               {"beta1", "0.8"},
               {"beta2", "0.99"},
               {"epsilon", "1e-7"},
               {"batch_size", "4"},
               {"max_epochs", "7"},
               {"patience", "2"},
               {"tau", "0.5"},
               {"method", "qaf"},
               {"codec", "trainable"},
               {"d_model", "16"},
               {"hidden", "12"},
               {"kmeans_iters", "11"},
               {"include_zero_codeword", "0"}});
    cfg.validate();
    CHECK(cfg.synth.seed == 9);
    CHECK(cfg.train.seed == 9);
    CHECK(cfg.synth.num_levels == 3);
    CHECK(cfg.train.method == AggMethod::QafStatic);
    CHECK(cfg.train.codec_trainable);
    CHECK(cfg.d_model == 16);
    CHECK(cfg.hidden == 12);
    CHECK(cfg.kmeans_iters == 11);
    CHECK_FALSE(cfg.include_zero_codeword);

    cfg.apply({{"tau", "-1"}});
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    RunConfig bad;
    CHECK_THROWS_AS(bad.apply({{"method", "fancy"}}), ConfigError);
    CHECK_THROWS_AS(bad.apply({{"codec", "maybe"}}), ConfigError);
    CHECK_THROWS_AS(bad.apply({{"batch_size", "x"}}), ConfigError);
}
