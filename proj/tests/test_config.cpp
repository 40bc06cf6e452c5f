// SPDX-License-Identifier: Apache-2.0
#include "support/tempdir.hpp"
#include "trim/config.hpp"
#include "trim/error.hpp"

#include <gtest/gtest.h>

using namespace trim;

TEST(Config, Defaults) {
    const PipelineConfig cfg;
    EXPECT_EQ(cfg.saliency.layers, 6u);
    EXPECT_EQ(cfg.saliency.w_q, 0.5);
    EXPECT_EQ(cfg.saliency.w_k, 0.5);
    EXPECT_EQ(cfg.saliency.epsilon, 1e-8);
    EXPECT_EQ(cfg.scoring.w_mu, 0.5);
    EXPECT_EQ(cfg.scoring.w_m, 0.5);
    EXPECT_EQ(cfg.scoring.lambda, 1.0);
    EXPECT_EQ(cfg.scoring.eta, 0.05);
    EXPECT_EQ(cfg.scoring.scope, ScoringScope::All);
    EXPECT_EQ(cfg.scoring.oov, OovPolicy::Backoff);
    EXPECT_EQ(cfg.budget.kind, Budget::Kind::TopP);
    EXPECT_EQ(cfg.budget.fraction, 0.05);
    EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, GoldenHash) {
    const PipelineConfig cfg;
    EXPECT_EQ(cfg.canonical_json(),
              "{\"saliency\":{\"epsilon\":1e-08,\"layers\":6,\"w_k\":0.5,\"w_q\":0.5},"
              "\"scoring\":{\"eta\":0.05,\"lambda\":1.0,\"oov\":\"backoff\",\"scope\":\"all\",\"w_m\":0.5,\"w_mu\":0.5}}");
    EXPECT_EQ(cfg.hash(), "632225f4ba60d892");
}

TEST(Config, Fnv1a) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Config, HashIgnoresExecutionSettings) {
    PipelineConfig a;
    PipelineConfig b;
    b.workers = 8;
    b.strict = true;
    b.budget = Budget::top_k(100);
    EXPECT_EQ(a.hash(), b.hash());
    b.scoring.lambda = 0.5;
    EXPECT_NE(a.hash(), b.hash());
    PipelineConfig c;
    c.saliency.layers = 4;
    EXPECT_NE(a.hash(), c.hash());
}

TEST(Config, OverlayIsPartial) {
    PipelineConfig cfg;
    cfg.overlay_json(R"({"scoring":{"lambda":0.25,"scope":"response"},"budget":{"kind":"top_k","value":12},"workers":3})");
    EXPECT_EQ(cfg.scoring.lambda, 0.25);
    EXPECT_EQ(cfg.scoring.scope, ScoringScope::ResponseOnly);
    EXPECT_EQ(cfg.scoring.w_mu, 0.5);
    EXPECT_EQ(cfg.saliency.layers, 6u);
    EXPECT_EQ(cfg.budget.kind, Budget::Kind::TopK);
    EXPECT_EQ(cfg.budget.count, 12u);
    EXPECT_EQ(cfg.workers, 3u);
}

TEST(Config, RoundTripThroughJson) {
    PipelineConfig cfg;
    cfg.saliency.layers = 3;
    cfg.saliency.w_q = 0.25;
    cfg.saliency.w_k = 0.75;
    cfg.scoring.oov = OovPolicy::Skip;
    cfg.budget = Budget::top_p(0.1);
    cfg.strict = true;
    PipelineConfig back;
    back.overlay_json(cfg.to_json());
    EXPECT_EQ(back.to_json(), cfg.to_json());
    EXPECT_EQ(back.hash(), cfg.hash());
}

TEST(Config, Rejections) {
    auto code = [](const std::string& text) {
        PipelineConfig cfg;
        try {
            cfg.overlay_json(text);
            cfg.validate();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::Io;
    };
    EXPECT_EQ(code("{\"bogus\":1}"), ErrorCode::InvalidConfig);
    EXPECT_EQ(code("{\"scoring\":{\"lamda\":1}}"), ErrorCode::InvalidConfig);
    EXPECT_EQ(code("{\"scoring\":{\"lambda\":\"x\"}}"), ErrorCode::InvalidConfig);
    EXPECT_EQ(code("{\"scoring\":{\"scope\":\"everything\"}}"), ErrorCode::InvalidConfig);
    EXPECT_EQ(code("{\"budget\":{\"kind\":\"top_k\",\"value\":0}}"), ErrorCode::InvalidConfig);
    EXPECT_EQ(code("{\"saliency\":{\"w_q\":0.9}}"), ErrorCode::InvalidConfig);
    EXPECT_EQ(code("[1,2]"), ErrorCode::InvalidConfig);
    EXPECT_EQ(code("{not json"), ErrorCode::InvalidConfig);
}

TEST(Config, LoadFromFile) {
    trim::testing::TempDir dir;
    trim::testing::spit(dir / "c.json", R"({"saliency":{"layers":2}})");
    EXPECT_EQ(load_config(dir / "c.json").saliency.layers, 2u);
    EXPECT_THROW((void)load_config(dir / "missing.json"), Error);
}
