#include <doctest.h>

#include <cstdio>

#include "bms/checkpoint.hpp"
#include "bms/config.hpp"
#include "bms/rng.hpp"

using bms::CheckpointFile;
using bms::NamedTensor;

namespace {

CheckpointFile sample_file() {
    CheckpointFile f;
    f.kind = "trajectory";
    f.profile = "desk";
    f.dtype = "f64";
    f.step = 123;
    f.config = {{"seed", 7}, {"objective", "bms"}};
    bms::RngStream rng(1, 0);
    NamedTensor a{"enc.w", {3, 2}, {}};
    for (int i = 0; i < 6; ++i) a.values.push_back(rng.normal());
    NamedTensor b{"enc.b", {3}, {0.1, -0.2, 0.3}};
    f.tensors = {a, b};
    return f;
}

}  // namespace

TEST_CASE("container round trip is byte identical") {
    auto f = sample_file();
    auto bytes1 = bms::encode_checkpoint(f);
    auto f2 = bms::decode_checkpoint(bytes1);
    auto bytes2 = bms::encode_checkpoint(f2);
    CHECK(bytes1 == bytes2);
    CHECK(f2.kind == "trajectory");
    CHECK(f2.step == 123);
    CHECK(f2.tensors.size() == 2);
    CHECK(f2.tensors[0].values == f.tensors[0].values);
    CHECK(f2.config.at("objective") == "bms");
}

TEST_CASE("corruption and version errors") {
    auto bytes = bms::encode_checkpoint(sample_file());

    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_THROWS_AS(bms::decode_checkpoint(wrong_magic), bms::VersionMismatch);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 5);
    CHECK_THROWS_AS(bms::decode_checkpoint(truncated), bms::CorruptPayload);

    auto padded = bytes;
    padded.push_back(0);
    CHECK_THROWS_AS(bms::decode_checkpoint(padded), bms::CorruptPayload);
}

TEST_CASE("f32 payloads round trip exactly for float-valued params") {
    CheckpointFile f = sample_file();
    f.dtype = "f32";
    for (auto& t : f.tensors)
        for (auto& v : t.values) v = static_cast<double>(static_cast<float>(v));
    auto bytes1 = bms::encode_checkpoint(f);
    auto f2 = bms::decode_checkpoint(bytes1);
    CHECK(bms::encode_checkpoint(f2) == bytes1);
    for (std::size_t i = 0; i < f.tensors.size(); ++i)
        CHECK(f2.tensors[i].values == f.tensors[i].values);
}

TEST_CASE("store transfer checks names and shapes") {
    bms::ParamStore<double> store;
    store.add("enc.w", {3, 2}, std::vector<double>(6, 0.0));
    store.add("enc.b", {3}, std::vector<double>(3, 0.0));
    auto f = sample_file();
    bms::checkpoint_into_store(f, store);
    CHECK((*store.find("enc.b")->value)[1] == -0.2);

    bms::ParamStore<double> wrong;
    wrong.add("enc.w", {2, 3}, std::vector<double>(6, 0.0));
    wrong.add("enc.b", {3}, std::vector<double>(3, 0.0));
    CHECK_THROWS_AS(bms::checkpoint_into_store(f, wrong), bms::CorruptPayload);

    auto back = bms::checkpoint_from_store(store);
    CHECK(back.tensors[0].name == "enc.w");
    CHECK(back.tensors[0].values == f.tensors[0].values);
}

TEST_CASE("non-finite values are refused at save time") {
    auto f = sample_file();
    f.tensors[0].values[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(bms::encode_checkpoint(f), bms::NumericalError);
}

TEST_CASE("run config json round trip and validation") {
    bms::RunConfig cfg;
    cfg.task = "star";
    cfg.objective = "cvae";
    cfg.seed = 999;
    cfg.data.fork.n_modes = 4;
    auto j = cfg.to_json();
    auto cfg2 = bms::RunConfig::from_json(j);
    CHECK(cfg2.task == "star");
    CHECK(cfg2.objective == "cvae");
    CHECK(cfg2.seed == 999);
    CHECK(cfg2.data.fork.n_modes == 4);
    CHECK(cfg2.to_json() == j);

    bms::RunConfig bad;
    bad.task = "nope";
    CHECK_THROWS_AS(bad.validate(), bms::ConfigError);
    bms::RunConfig bad2;
    bad2.alpha = 2.0;
    CHECK_THROWS_AS(bad2.validate(), bms::InvalidAlpha);

    // image-task defaults per the training protocol
    nlohmann::json jb{{"task", "blobs"}};
    auto cfgb = bms::RunConfig::from_json(jb);
    CHECK(cfgb.batch == 4);
    CHECK(cfgb.t_train == 5);

    setenv("BMS_SEED", "4242", 1);
    bms::RunConfig cfge;
    bms::apply_seed_env(cfge);
    CHECK(cfge.seed == 4242);
    unsetenv("BMS_SEED");
}
