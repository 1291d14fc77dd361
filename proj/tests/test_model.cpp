#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lorakit/errors.hpp"
#include "lorakit/model.hpp"
#include "lorakit/serialize.hpp"
#include "lorakit/tensor.hpp"
#include "testutil.hpp"

using namespace lorakit;
using testutil::check_close;

namespace {

ModelConfig tiny_config() {
    ModelConfig config;
    config.vocab_size = 11;
    config.d_model = 4;
    config.n_layers = 2;
    config.n_heads = 2;
    config.d_ff = 6;
    config.max_seq_len = 8;
    config.n_classes = 3;
    return config;
}

// Deterministic rational fills, reproducible exactly in any language:
// matrices use ((idx*37) % 19 - 9)/19, gains 1 + ((idx*13) % 7 - 3)/28,
// idx counted from tensor_position*1000.
TransformerWeights reference_weights() {
    TransformerWeights weights = init_weights(tiny_config(), 1);
    std::size_t position = 0;
    for (auto& [name, tensor] : weights.named_tensors()) {
        const bool is_gain = name.find("norm") != std::string::npos;
        std::vector<double>& data = tensor.values_mut();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const std::uint64_t idx = position * 1000 + j;
            if (is_gain) {
                data[j] = 1.0 + (static_cast<double>((idx * 13) % 7) - 3.0) / 28.0;
            } else {
                data[j] = (static_cast<double>((idx * 37) % 19) - 9.0) / 19.0;
            }
        }
        ++position;
    }
    return weights;
}

const std::vector<int> kIds = {3, 1, 4, 1, 5, 9, 2};

}  // namespace

TEST_SUITE("model.config") {
    TEST_CASE("validation accepts a sound config") {
        CHECK_NOTHROW(tiny_config().validate());
        CHECK(tiny_config().head_dim() == 2);
    }

    TEST_CASE("validation rejects broken configs") {
        auto expect_reject = [](auto mutate) {
            ModelConfig config = tiny_config();
            mutate(config);
            CHECK_THROWS_AS(config.validate(), ConfigError);
        };
        expect_reject([](ModelConfig& c) { c.vocab_size = 0; });
        expect_reject([](ModelConfig& c) { c.d_model = 0; });
        expect_reject([](ModelConfig& c) { c.n_layers = 0; });
        expect_reject([](ModelConfig& c) { c.n_heads = 0; });
        expect_reject([](ModelConfig& c) { c.d_ff = 0; });
        expect_reject([](ModelConfig& c) { c.max_seq_len = 0; });
        expect_reject([](ModelConfig& c) { c.n_heads = 3; });        // 4 % 3 != 0
        expect_reject([](ModelConfig& c) { c.n_heads = 4; });        // head_dim 1 is odd
        expect_reject([](ModelConfig& c) { c.n_classes = 1; });
        expect_reject([](ModelConfig& c) { c.rope_theta = 0.0; });
        expect_reject([](ModelConfig& c) { c.rmsnorm_eps = -1.0; });
    }
}

TEST_SUITE("model.init") {
    TEST_CASE("same seed gives bitwise-identical weights") {
        TransformerWeights a = init_weights(tiny_config(), 42);
        TransformerWeights b = init_weights(tiny_config(), 42);
        auto named_a = a.named_tensors();
        auto named_b = b.named_tensors();
        REQUIRE(named_a.size() == named_b.size());
        for (std::size_t i = 0; i < named_a.size(); ++i) {
            CHECK(named_a[i].first == named_b[i].first);
            CHECK(named_a[i].second.values() == named_b[i].second.values());
        }
    }

    TEST_CASE("different seeds give different weights") {
        TransformerWeights a = init_weights(tiny_config(), 42);
        TransformerWeights b = init_weights(tiny_config(), 43);
        CHECK(a.token_embedding.values() != b.token_embedding.values());
    }

    TEST_CASE("norm gains start at exactly 1.0") {
        TransformerWeights weights = init_weights(tiny_config(), 7);
        for (const auto& [name, tensor] : weights.named_tensors()) {
            if (name.find("norm") == std::string::npos) continue;
            for (double v : tensor.values()) CHECK(v == 1.0);
        }
    }

    TEST_CASE("parameter count matches the closed-form formula") {
        ModelConfig c = tiny_config();
        TransformerWeights weights = init_weights(c, 1);
        const std::size_t per_layer = 4 * c.d_model * c.d_model      // attention
                                      + 2 * c.d_ff * c.d_model      // gate, up
                                      + c.d_model * c.d_ff          // down
                                      + 2 * c.d_model;              // norm gains
        const std::size_t expected = c.vocab_size * c.d_model       // embedding
                                     + c.n_layers * per_layer
                                     + c.d_model                    // final gain
                                     + c.vocab_size * c.d_model     // lm head
                                     + c.n_classes * c.d_model;     // classifier
        auto [total, trainable] = count_params(weights);
        CHECK(total == expected);
        CHECK(trainable == expected);  // nothing frozen yet
    }

    TEST_CASE("freezing everything zeroes the trainable tally") {
        TransformerWeights weights = init_weights(tiny_config(), 1);
        weights.set_all_requires_grad(false);
        auto [total, trainable] = count_params(weights);
        CHECK(total > 0);
        CHECK(trainable == 0);
    }
}

TEST_SUITE("model.forward") {
    TEST_CASE("matches an independent reference implementation") {
        TransformerWeights weights = reference_weights();
        Tensor lm = forward_lm(weights, kIds);
        REQUIRE(lm.shape() == std::vector<std::size_t>{7, 11});
        const std::vector<double> row0 = {
            0.28555278006182855,  0.41440884536091094, -0.06880139951064793,
            0.06005466578843443,  0.1889107310875168,   0.31776679638659916,
            -1.3567873677972402, -0.03658738318587731,  0.09226868211320502,
            0.22112474741228738,  0.3499808127113697};
        const std::vector<double> row6 = {
            0.16419099303382642, 0.10829087248856605, 0.3179163245332923,
            0.26201620398803205, 0.20611608344277169, 0.15021596289751132,
            -1.102048879970727,  0.3039412943969773,  0.24804117385171695,
            0.19214105330645662, 0.1362409327611963};
        for (std::size_t j = 0; j < 11; ++j) {
            check_close(lm.values()[j], row0[j], 1e-10);
            check_close(lm.values()[6 * 11 + j], row6[j], 1e-10);
        }

        Tensor logits = forward_classifier(weights, kIds);
        REQUIRE(logits.shape() == std::vector<std::size_t>{3});
        const std::vector<double> expected = {0.26201620398803205, 0.20611608344277169,
                                              0.15021596289751132};
        for (std::size_t j = 0; j < 3; ++j) check_close(logits.values()[j], expected[j], 1e-10);
    }

    TEST_CASE("single-token input produces finite logits of the right shape") {
        TransformerWeights weights = init_weights(tiny_config(), 3);
        std::vector<int> one = {5};
        Tensor lm = forward_lm(weights, one);
        CHECK(lm.shape() == std::vector<std::size_t>{1, 11});
        for (double v : lm.values()) CHECK(std::isfinite(v));
    }

    TEST_CASE("causality: editing a later token never changes earlier logits") {
        TransformerWeights weights = reference_weights();
        Tensor base = forward_lm(weights, kIds);
        std::vector<int> edited = kIds;
        edited.back() = 7;
        Tensor changed = forward_lm(weights, edited);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 11; ++j) {
                CHECK(base.values()[i * 11 + j] == changed.values()[i * 11 + j]);
            }
        }
        bool last_row_differs = false;
        for (std::size_t j = 0; j < 11; ++j) {
            if (base.values()[6 * 11 + j] != changed.values()[6 * 11 + j]) last_row_differs = true;
        }
        CHECK(last_row_differs);
    }

    TEST_CASE("zero classifier head yields exactly zero logits") {
        TransformerWeights weights = init_weights(tiny_config(), 9);
        weights.classifier_head.values_mut().assign(weights.classifier_head.numel(), 0.0);
        Tensor logits = forward_classifier(weights, kIds);
        for (double v : logits.values()) CHECK(v == 0.0);
    }

    TEST_CASE("appending a token changes classifier logits (last-token pooling)") {
        TransformerWeights weights = reference_weights();
        Tensor before = forward_classifier(weights, kIds);
        std::vector<int> longer = kIds;
        longer.push_back(6);
        Tensor after = forward_classifier(weights, longer);
        CHECK(before.values() != after.values());
    }

    TEST_CASE("same weights and input give bitwise-identical logits") {
        TransformerWeights weights = init_weights(tiny_config(), 11);
        Tensor a = forward_lm(weights, kIds);
        Tensor b = forward_lm(weights, kIds);
        CHECK(a.values() == b.values());
        Tensor c = forward_classifier(weights, kIds);
        Tensor d = forward_classifier(weights, kIds);
        CHECK(c.values() == d.values());
    }

    TEST_CASE("input validation") {
        TransformerWeights weights = init_weights(tiny_config(), 1);
        std::vector<int> empty;
        CHECK_THROWS_AS(forward_lm(weights, empty), ContractError);
        std::vector<int> too_long(9, 1);  // max_seq_len is 8
        CHECK_THROWS_AS(forward_lm(weights, too_long), ContractError);
        std::vector<int> bad_id = {3, 11};  // vocab_size is 11
        CHECK_THROWS_AS(forward_lm(weights, bad_id), DataError);
        std::vector<int> negative = {-1};
        CHECK_THROWS_AS(forward_classifier(weights, negative), DataError);
    }
}

TEST_SUITE("model.checkpoint") {
    TEST_CASE("save and load round-trips bitwise") {
        const auto path = std::filesystem::temp_directory_path() / "lorakit_test_model.bin";
        TransformerWeights original = reference_weights();
        save_checkpoint(path, original);
        TransformerWeights loaded = load_checkpoint(path);

        CHECK(loaded.config.vocab_size == original.config.vocab_size);
        CHECK(loaded.config.d_model == original.config.d_model);
        CHECK(loaded.config.n_layers == original.config.n_layers);
        CHECK(loaded.config.n_heads == original.config.n_heads);
        CHECK(loaded.config.d_ff == original.config.d_ff);
        CHECK(loaded.config.max_seq_len == original.config.max_seq_len);
        CHECK(loaded.config.n_classes == original.config.n_classes);
        CHECK(loaded.config.rope_theta == original.config.rope_theta);
        CHECK(loaded.config.rmsnorm_eps == original.config.rmsnorm_eps);

        auto named_in = original.named_tensors();
        auto named_out = loaded.named_tensors();
        REQUIRE(named_in.size() == named_out.size());
        for (std::size_t i = 0; i < named_in.size(); ++i) {
            CHECK(named_in[i].first == named_out[i].first);
            CHECK(named_in[i].second.values() == named_out[i].second.values());
            CHECK(named_out[i].second.requires_grad());
        }

        Tensor a = forward_lm(original, kIds);
        Tensor b = forward_lm(loaded, kIds);
        CHECK(a.values() == b.values());
        std::filesystem::remove(path);
    }

    TEST_CASE("loading a missing or foreign file is a data error") {
        CHECK_THROWS_AS(load_checkpoint("/nonexistent/lorakit_nope.bin"), DataError);

        const auto path = std::filesystem::temp_directory_path() / "lorakit_test_foreign.bin";
        NamedTensorFile file;
        file.kind = "something-else";
        file.meta = {{"note", "not a model"}};
        file.tensors.emplace_back("x", Tensor::zeros({2, 2}));
        write_tensor_file(path, file);
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
        std::filesystem::remove(path);
    }

    TEST_CASE("corrupt bytes are rejected") {
        const auto path = std::filesystem::temp_directory_path() / "lorakit_test_corrupt.bin";
        TransformerWeights original = init_weights(tiny_config(), 5);
        save_checkpoint(path, original);
        std::string bytes = read_text_file(path);
        bytes.resize(bytes.size() / 2);  // truncate
        write_text_file(path, bytes);
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
        std::filesystem::remove(path);
    }
}
