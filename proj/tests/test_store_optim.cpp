#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <unistd.h>

#include "oracles.hpp"
#include "xmm/errors.hpp"
#include "xmm/optim.hpp"
#include "xmm/store.hpp"

using namespace xmm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("xmm_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ParameterStore small_store(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParameterStore store;
    store.add("core.w", Tensor::randn({3, 3}, 0.02, rng), ParameterGroupTag(GroupKind::CORE_TRANSFORMER),
              true);
    store.add("emb.en.tok", Tensor::randn({5, 3}, 0.02, rng),
              ParameterGroupTag(GroupKind::TEXT_EMBEDDING, "en"), false);
    store.add("head.w", Tensor::randn({3, 2}, 0.02, rng), ParameterGroupTag(GroupKind::PREDICTION_HEAD),
              true);
    store.set_active_language("en");
    return store;
}

}  // namespace

TEST_CASE("group tags enforce the language rule") {
    CHECK_NOTHROW(ParameterGroupTag(GroupKind::TEXT_EMBEDDING, "de"));
    CHECK_NOTHROW(ParameterGroupTag(GroupKind::LANGUAGE_ADAPTER, "ru"));
    CHECK_THROWS_AS(ParameterGroupTag(GroupKind::TEXT_EMBEDDING), ContractError);
    CHECK_THROWS_AS(ParameterGroupTag(GroupKind::CORE_TRANSFORMER, "en"), ContractError);
    CHECK_THROWS_AS(ParameterGroupTag(GroupKind::MLM_HEAD, "en"), ContractError);
}

TEST_CASE("set_trainable") {
    ParameterStore store = small_store(1);
    SUBCASE("empty selection leaves the store unchanged") {
        const auto before = store_fingerprint(store);
        const auto count = set_trainable(
            store, [](const ParameterGroupTag& t) { return t.kind == GroupKind::MLM_HEAD; }, false);
        CHECK(count == 0);
        CHECK(store_fingerprint(store) == before);
        CHECK(store.trainable_names() == std::vector<std::string>{"core.w", "head.w"});
    }
    SUBCASE("exhaustive selection flips every matching flag") {
        const auto count = set_trainable(
            store, [](const ParameterGroupTag& t) { return t.kind == GroupKind::CORE_TRANSFORMER; },
            false);
        CHECK(count == 1);
        CHECK_FALSE(store.at("core.w").trainable);
        CHECK_FALSE(store.at("core.w").tensor.requires_grad());
    }
}

TEST_CASE("store save/load round-trips names, tags, shapes and values exactly") {
    const auto dir = temp_dir("store");
    ParameterStore store = small_store(2);
    save_store(store, dir.string(), "{\"note\":1}");
    auto [loaded, config] = load_store(dir.string());
    CHECK(config == "{\"note\":1}");
    CHECK(loaded.names() == store.names());
    CHECK(loaded.active_language() == "en");
    for (const auto& name : store.names()) {
        const auto& a = store.at(name);
        const auto& b = loaded.at(name);
        CHECK(a.tensor.shape() == b.tensor.shape());
        CHECK(a.tensor.values() == b.tensor.values());  // bit-exact
        CHECK(a.group == b.group);
        CHECK(a.trainable == b.trainable);
    }
    CHECK(names_with_different_bytes(store, loaded).empty());
    fs::remove_all(dir);
}

TEST_CASE("tensor file format") {
    const auto dir = temp_dir("tensorfile");
    Tensor t = Tensor::from_values({2, 3}, {1.5, -2.25, 3.0, 0.0, 1e-300, 7.0});
    const auto path = (dir / "t.bin").string();
    write_tensor_file(path, t);
    // magic + u32 rank + 2x u64 dims + 6 doubles
    CHECK(fs::file_size(path) == 8 + 4 + 16 + 48);
    Tensor back = read_tensor_file(path);
    CHECK(back.shape() == t.shape());
    CHECK(back.values() == t.values());
    fs::remove_all(dir);
}

TEST_CASE("adam freeze contract: frozen parameters are bit-identical") {
    ParameterStore store = small_store(3);
    set_trainable(store, [](const ParameterGroupTag& t) { return t.kind == GroupKind::TEXT_EMBEDDING; },
                  false);
    const auto frozen_before = store.at("emb.en.tok").tensor.values();
    OptimizerState optim;
    optim.learning_rate = 0.1;
    for (int step = 0; step < 20; ++step) {
        // Push a gradient signal into every tensor, frozen or not.
        for (auto& [name, entry] : store) {
            auto& node = entry.tensor.node();
            node.ensure_grad();
            for (auto& g : node.grad) g += 0.3;
        }
        adam_step(store, optim);
    }
    CHECK(store.at("emb.en.tok").tensor.values() == frozen_before);
    // moments exist only for trainable parameters
    CHECK(optim.moments.count("core.w") == 1);
    CHECK(optim.moments.count("emb.en.tok") == 0);
}

TEST_CASE("adam null update with zero gradients") {
    ParameterStore store = small_store(4);
    const auto before = store_fingerprint(store);
    OptimizerState optim;
    adam_step(store, optim);
    CHECK(store_fingerprint(store) == before);
}

TEST_CASE("adam drives a 1-d quadratic to its minimum") {
    // loss = (w - 3)^2, w0 = 0, lr = 0.1, 500 steps
    ParameterStore store;
    store.add("w", Tensor::scalar(0.0, true), ParameterGroupTag(GroupKind::CORE_TRANSFORMER), true);
    OptimizerState optim;
    optim.learning_rate = 0.1;
    for (int step = 0; step < 500; ++step) {
        Tensor w = store.tensor("w");
        Tensor diff = add_const(w, -3.0);
        Tensor loss = mul(diff, diff);
        backward(loss);
        adam_step(store, optim);
    }
    CHECK(std::abs(store.tensor("w").item() - 3.0) < 0.01);
    CHECK(optim.step_count == 500);
}

TEST_CASE("store fingerprint reacts to value changes") {
    ParameterStore a = small_store(5);
    ParameterStore b = a.clone();
    CHECK(store_fingerprint(a) == store_fingerprint(b));
    b.at("core.w").tensor.values()[0] += 1e-12;
    CHECK(store_fingerprint(a) != store_fingerprint(b));
    CHECK(names_with_different_bytes(a, b) == std::vector<std::string>{"core.w"});
}
