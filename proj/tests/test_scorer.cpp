// SPDX-License-Identifier: Apache-2.0
#include "support/reference.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"
#include "trim/error.hpp"
#include "trim/score_io.hpp"
#include "trim/scorer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace trim;
using trim::testing::TempDir;

namespace {

FingerprintDictionary two_class_dict() {
    FingerprintDictionary d;
    d.meta.hidden_dim = 2;
    d.entries[1] = FingerprintEntry{{1.0f, 0.0f}, 1, 1.0f};
    d.entries[2] = FingerprintEntry{{0.0f, 1.0f}, 1, 1.0f};
    return d;
}

EmbeddingTable embeddings_for_two_classes() {
    EmbeddingTable t;
    t.dim = 2;
    t.entries[1] = {1.0f, 0.0f};
    t.entries[2] = {0.0f, 1.0f};
    t.entries[3] = {0.1f, 1.0f}; // nearest to class 2
    t.entries[4] = {1.0f, 1.0f}; // tie between 1 and 2
    return t;
}

CandidateRecord record(std::string id, std::vector<TokenClass> ids, std::vector<float> hidden,
                       std::vector<Role> roles = {}) {
    CandidateRecord r;
    r.sample_id = std::move(id);
    r.hidden_dim = 2;
    r.token_ids = std::move(ids);
    r.hidden = std::move(hidden);
    r.roles = roles.empty() ? std::vector<Role>(r.token_ids.size(), Role::Response) : std::move(roles);
    return r;
}

struct Fixture {
    trim::testing::World world;
    FingerprintDictionary dict;
    std::vector<CandidateRecord> candidates;
    std::vector<ValidationRecord> validation;
};

Fixture random_fixture(std::uint64_t seed, std::size_t n, ScoringScope scope = ScoringScope::All) {
    std::mt19937_64 rng(seed);
    Fixture f;
    f.world = trim::testing::make_world(rng, 48, 12, 6);
    for (std::size_t i = 0; i < 6; ++i) {
        // validation covers only the lower half of the vocabulary, so candidates have OOV tokens
        f.validation.push_back(
            trim::testing::make_validation(rng, f.world, trim::testing::sample_name("v", i), {20, 24}, 2, 2));
    }
    f.dict = fingerprint_records(f.validation, SaliencyConfig{}, scope);
    std::uniform_int_distribution<std::size_t> len(1, 30);
    for (std::size_t i = 0; i < n; ++i) {
        f.candidates.push_back(trim::testing::make_candidate(rng, f.world, trim::testing::sample_name("c", i), {len(rng)}));
    }
    return f;
}

reference::Fingerprints as_reference(const FingerprintDictionary& d) {
    reference::Fingerprints out;
    for (const auto& [cls, e] : d.entries) out[cls] = std::vector<double>(e.vector.begin(), e.vector.end());
    return out;
}

} // namespace

TEST(TokenScorePool, HandValues) {
    const std::vector<double> scores{0.5, -0.25, 1.0, 0.75};
    ScoringConfig cfg;
    const auto rec = pool_token_scores(scores, 8, cfg);
    EXPECT_DOUBLE_EQ(rec.mean, 0.5);
    EXPECT_DOUBLE_EQ(rec.max, 1.0);
    EXPECT_DOUBLE_EQ(rec.coverage, 0.5);
    EXPECT_DOUBLE_EQ(rec.score, 0.5 * 0.5 + 0.5 * 1.0 + 0.05 * 0.5);
}

TEST(TokenScorePool, EmptyIsSentinel) {
    const auto rec = pool_token_scores({}, 4, ScoringConfig{});
    EXPECT_TRUE(rec.empty_scope());
    EXPECT_EQ(rec.score, -std::numeric_limits<double>::infinity());
}

TEST(TokenScorePool, DuplicationAndPermutationAreExact) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ScoringConfig no_coverage;
    no_coverage.eta = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> scores(1 + trial % 57);
        for (auto& s : scores) s = u(rng);
        const auto base = pool_token_scores(scores, scores.size(), no_coverage);
        for (int k : {2, 5, 10}) {
            std::vector<double> dup;
            for (int r = 0; r < k; ++r) dup.insert(dup.end(), scores.begin(), scores.end());
            std::shuffle(dup.begin(), dup.end(), rng);
            const auto rec = pool_token_scores(dup, dup.size(), no_coverage);
            ASSERT_EQ(rec.mean, base.mean);
            ASSERT_EQ(rec.max, base.max);
            ASSERT_EQ(rec.score, base.score);
        }
    }
}

TEST(TokenScorePool, MeanIsAccurate) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> scores(1 + trial * 7);
        long double sum = 0;
        for (auto& s : scores) {
            s = u(rng);
            sum += s;
        }
        TokenScorePool pool;
        for (double s : scores) pool.add(s);
        ASSERT_NEAR(pool.mean(), static_cast<double>(sum / scores.size()), 1e-15);
    }
}

TEST(Scorer, HandExample) {
    const auto dict = two_class_dict();
    const auto table = embeddings_for_two_classes();
    ScoringConfig cfg;
    cfg.lambda = 0.5;
    const Scorer scorer(dict, &table, cfg);
    // tokens: class 1 along (3,4), class 2 along (0,2), class 3 (OOV -> class 2) along (1,0), SPECIAL
    const auto rec = scorer.score(record("s", {1, 2, 3, 1}, {3, 4, 0, 2, 1, 0, 9, 9},
                                         {Role::Prompt, Role::Response, Role::Response, Role::Special}));
    EXPECT_EQ(rec.total_tokens, 4u);
    EXPECT_EQ(rec.scored_tokens, 3u);
    EXPECT_EQ(rec.oov_tokens, 1u);
    EXPECT_NEAR(rec.mean, (0.6 + 1.0 + 0.0) / 3.0, 1e-15);
    EXPECT_DOUBLE_EQ(rec.max, 1.0);
    EXPECT_DOUBLE_EQ(rec.coverage, 0.75);
    EXPECT_NEAR(rec.score, 0.5 * (1.6 / 3.0) + 0.5 + 0.05 * 0.75, 1e-15);
    EXPECT_EQ(scorer.resolver().resolve(3), 2u);
}

TEST(Scorer, BackoffTiesGoToLowestClass) {
    const auto dict = two_class_dict();
    const auto table = embeddings_for_two_classes();
    const OovResolver resolver(dict, &table);
    EXPECT_EQ(resolver.resolve(4), 1u);
    EXPECT_EQ(resolver.cached(), 1u);
    EXPECT_EQ(resolver.resolve(4), 1u);
    EXPECT_EQ(resolver.cached(), 1u);
}

TEST(Scorer, EmbeddingGaps) {
    const auto dict = two_class_dict();
    EmbeddingTable partial;
    partial.dim = 2;
    partial.entries[1] = {1.0f, 0.0f};
    try {
        const OovResolver r(dict, &partial);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmbeddingGap);
    }
    const auto table = embeddings_for_two_classes();
    const Scorer scorer(dict, &table, ScoringConfig{});
    try {
        (void)scorer.score(record("s", {99}, {1, 1}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmbeddingGap);
    }
    // without a table, OOV tokens fail only under backoff
    const Scorer no_table(dict, nullptr, ScoringConfig{});
    EXPECT_THROW((void)no_table.score(record("s", {3}, {1, 1})), Error);
    ScoringConfig skip;
    skip.oov = OovPolicy::Skip;
    const Scorer skipping(dict, nullptr, skip);
    EXPECT_TRUE(skipping.score(record("s", {3}, {1, 1})).empty_scope());
}

TEST(Scorer, ScopeMismatch) {
    auto dict = two_class_dict();
    dict.meta.scope = ScoringScope::PromptOnly;
    try {
        const Scorer s(dict, nullptr, ScoringConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigMismatch);
    }
}

TEST(Scorer, DimensionMismatch) {
    const auto dict = two_class_dict();
    const Scorer scorer(dict, nullptr, ScoringConfig{});
    CandidateRecord r;
    r.sample_id = "x";
    r.hidden_dim = 3;
    r.token_ids = {1};
    r.roles = {Role::Prompt};
    r.hidden = {1, 2, 3};
    try {
        (void)scorer.score(r);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
    }
}

TEST(Scorer, EmptyScopeAndZeroNorm) {
    const auto dict = two_class_dict();
    const Scorer scorer(dict, nullptr, ScoringConfig{});
    const auto special_only = scorer.score(record("s", {1, 2}, {1, 0, 0, 1}, {Role::Special, Role::Special}));
    EXPECT_TRUE(special_only.empty_scope());
    EXPECT_EQ(special_only.score, -std::numeric_limits<double>::infinity());

    const auto zero = scorer.score(record("z", {1, 2}, {0, 0, 0, 3}));
    EXPECT_EQ(zero.scored_tokens, 1u);
    EXPECT_EQ(zero.zero_norm_tokens, 1u);
    EXPECT_DOUBLE_EQ(zero.mean, 1.0);
    EXPECT_DOUBLE_EQ(zero.coverage, 0.5);

    const std::string line = format_score_line(ScoreResult{special_only}, "h");
    EXPECT_EQ(line, "{\"sample_id\":\"s\",\"S\":null,\"mu\":null,\"m\":null,\"kappa\":null,\"scored_tokens\":0,"
                    "\"total_tokens\":2,\"oov_tokens\":0,\"source\":\"\",\"empty_scope\":true,\"config_hash\":\"h\"}");
}

TEST(Scorer, ScopesSelectRoles) {
    auto dict = two_class_dict();
    dict.meta.scope = ScoringScope::PromptOnly;
    ScoringConfig cfg;
    cfg.scope = ScoringScope::PromptOnly;
    const Scorer prompt(dict, nullptr, cfg);
    const auto r = prompt.score(record("s", {1, 2}, {1, 0, 1, 0}, {Role::Prompt, Role::Response}));
    EXPECT_EQ(r.scored_tokens, 1u);
    EXPECT_DOUBLE_EQ(r.max, 1.0);
}

TEST(Scorer, LambdaIsLinearForOovTokens) {
    const auto f = random_fixture(3, 60);
    std::size_t oov_checked = 0;
    const Scorer base(f.dict, &f.world.embeddings, ScoringConfig{});
    for (double lambda : {0.1, 0.37, 0.5, 0.9}) {
        ScoringConfig cfg;
        cfg.lambda = lambda;
        const Scorer scaled(f.dict, &f.world.embeddings, cfg);
        for (const auto& c : f.candidates) {
            for (std::size_t i = 0; i < c.length(); ++i) {
                const auto a = base.token_score(c.hidden_at(i), c.token_ids[i]);
                const auto b = scaled.token_score(c.hidden_at(i), c.token_ids[i]);
                ASSERT_TRUE(a && b);
                ASSERT_EQ(a->oov, b->oov);
                if (a->oov) {
                    ++oov_checked;
                    ASSERT_NEAR(b->value, lambda * a->value, 1e-9);
                } else {
                    ASSERT_EQ(b->value, a->value);
                }
            }
        }
    }
    EXPECT_GT(oov_checked, 100u);
}

TEST(Scorer, BackoffEqualsSkipWithFullCoverage) {
    auto f = random_fixture(4, 40);
    // restrict every candidate to fingerprinted classes
    std::vector<TokenClass> known;
    for (const auto& [cls, e] : f.dict.entries) known.push_back(cls);
    for (auto& c : f.candidates) {
        for (auto& id : c.token_ids) id = known[id % known.size()];
    }
    ScoringConfig skip;
    skip.oov = OovPolicy::Skip;
    const Scorer a(f.dict, &f.world.embeddings, ScoringConfig{});
    const Scorer b(f.dict, &f.world.embeddings, skip);
    for (const auto& c : f.candidates) {
        const auto ra = a.score(c);
        EXPECT_EQ(ra.oov_tokens, 0u);
        EXPECT_EQ(format_score_line(ScoreResult{ra}, "h"), format_score_line(ScoreResult{b.score(c)}, "h"));
    }
}

TEST(Scorer, MatchesReference) {
    for (std::uint64_t seed = 20; seed < 30; ++seed) {
        for (int variant = 0; variant < 4; ++variant) {
            const auto scope = static_cast<ScoringScope>(variant % 3);
            const auto f = random_fixture(seed, 40, scope);
            ScoringConfig cfg;
            cfg.scope = scope;
            cfg.lambda = variant == 1 ? 0.6 : 1.0;
            cfg.oov = variant == 3 ? OovPolicy::Skip : OovPolicy::Backoff;
            cfg.w_mu = variant == 2 ? 0.3 : 0.5;
            cfg.w_m = 1.0 - cfg.w_mu;
            reference::Params p;
            p.scope = variant % 3;
            p.lambda = cfg.lambda;
            p.skip_oov = cfg.oov == OovPolicy::Skip;
            p.w_mu = cfg.w_mu;
            p.w_m = cfg.w_m;
            const auto fps = reference::stored(reference::fingerprints(f.validation, p));
            const Scorer scorer(f.dict, &f.world.embeddings, cfg);
            for (const auto& c : f.candidates) {
                const auto got = scorer.score(c);
                const auto want = reference::score(c, fps, f.world.embeddings, p);
                ASSERT_EQ(got.empty_scope(), want.empty) << c.sample_id;
                ASSERT_EQ(got.scored_tokens, want.scored);
                ASSERT_EQ(got.oov_tokens, want.oov);
                if (!want.empty) {
                    ASSERT_NEAR(got.score, want.S, 1e-5 * std::abs(want.S)) << c.sample_id;
                }
            }
        }
    }
}

TEST(Scorer, ReferenceAgreesWithEngineFingerprints) {
    // isolate scoring from fingerprinting: score both sides with the same dictionary
    const auto f = random_fixture(5, 50);
    const auto fps = as_reference(f.dict);
    const Scorer scorer(f.dict, &f.world.embeddings, ScoringConfig{});
    for (const auto& c : f.candidates) {
        const auto want = reference::score(c, fps, f.world.embeddings, reference::Params{});
        const auto got = scorer.score(c);
        if (!want.empty) {
            ASSERT_NEAR(got.mean, want.mu, 1e-12);
            ASSERT_NEAR(got.max, want.m, 1e-12);
            ASSERT_NEAR(got.score, want.S, 1e-12);
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

class VectorSource final : public CandidateSource {
public:
    explicit VectorSource(const std::vector<CandidateRecord>& recs) : recs_(recs) {}
    bool next(CandidateRecord& out) override {
        if (i_ == recs_.size()) return false;
        out = recs_[i_++];
        return true;
    }

private:
    const std::vector<CandidateRecord>& recs_;
    std::size_t i_ = 0;
};

std::string run_corpus(const Fixture& f, unsigned workers, std::size_t batch, const CorpusManifest* manifest = nullptr) {
    const Scorer scorer(f.dict, &f.world.embeddings, ScoringConfig{});
    VectorSource source(f.candidates);
    CorpusOptions opts;
    opts.workers = workers;
    opts.batch_size = batch;
    opts.manifest = manifest;
    std::string out;
    (void)score_corpus(source, scorer, opts, [&](ScoreResult&& r) { out += format_score_line(r, "h") + "\n"; });
    return out;
}

} // namespace

TEST(ScoreCorpus, WorkerCountDoesNotChangeOutput) {
    const auto f = random_fixture(6, 300);
    const std::string base = run_corpus(f, 1, 64);
    for (unsigned w : {2u, 4u, 8u}) {
        for (std::size_t batch : {1u, 7u, 64u}) {
            EXPECT_EQ(run_corpus(f, w, batch), base) << w << " workers, batch " << batch;
        }
    }
}

TEST(ScoreCorpus, StatsAndSources) {
    const auto f = random_fixture(7, 50);
    CorpusManifest m;
    for (const auto& c : f.candidates) m.add({c.sample_id, c.sample_id < "c000025" ? "a" : "b", c.length(), {}});
    const Scorer scorer(f.dict, &f.world.embeddings, ScoringConfig{});
    VectorSource source(f.candidates);
    CorpusOptions opts;
    opts.workers = 3;
    opts.batch_size = 4;
    opts.manifest = &m;
    std::vector<ScoreResult> results;
    const auto stats = score_corpus(source, scorer, opts, [&](ScoreResult&& r) { results.push_back(std::move(r)); });
    EXPECT_EQ(stats.records, 50u);
    EXPECT_EQ(stats.errors, 0u);
    std::uint64_t total = 0;
    for (const auto& c : f.candidates) total += c.length();
    EXPECT_EQ(stats.total_tokens, total);
    ASSERT_EQ(results.size(), 50u);
    for (std::size_t i = 0; i < 50; ++i) {
        const auto& rec = std::get<ScoreRecord>(results[i]);
        EXPECT_EQ(rec.sample_id, f.candidates[i].sample_id);
        EXPECT_EQ(rec.source, i < 25 ? "a" : "b");
    }
}

TEST(ScoreCorpus, RecordErrorsAndStrictMode) {
    auto f = random_fixture(8, 20);
    f.candidates[5].hidden_dim = 3; // wrong dimension
    f.candidates[5].hidden.resize(f.candidates[5].length() * 3);
    const Scorer scorer(f.dict, &f.world.embeddings, ScoringConfig{});
    for (unsigned workers : {1u, 4u}) {
        VectorSource source(f.candidates);
        CorpusOptions opts;
        opts.workers = workers;
        std::vector<ScoreResult> results;
        const auto stats = score_corpus(source, scorer, opts, [&](ScoreResult&& r) { results.push_back(std::move(r)); });
        EXPECT_EQ(stats.errors, 1u);
        ASSERT_TRUE(std::holds_alternative<RecordError>(results[5]));
        EXPECT_EQ(std::get<RecordError>(results[5]).code, ErrorCode::DimensionMismatch);

        VectorSource again(f.candidates);
        opts.strict = true;
        EXPECT_THROW((void)score_corpus(again, scorer, opts, [](ScoreResult&&) {}), Error);
    }
}

TEST(ScoreFile, RoundTripAndCanonicalOrder) {
    TempDir dir;
    const auto f = random_fixture(9, 30);
    const Scorer scorer(f.dict, &f.world.embeddings, ScoringConfig{});
    std::vector<ScoreResult> results;
    for (auto it = f.candidates.rbegin(); it != f.candidates.rend(); ++it) results.emplace_back(scorer.score(*it));
    results.emplace_back(RecordError{"c000003x", ErrorCode::DimensionMismatch, "bad"});
    canonicalize(results);
    EXPECT_TRUE(first_duplicate_id(results).empty());
    for (std::size_t i = 1; i < results.size(); ++i) EXPECT_LT(sample_id_of(results[i - 1]), sample_id_of(results[i]));
    write_score_file(dir / "s.jsonl", results, "abc");
    const auto back = read_score_file(dir / "s.jsonl");
    EXPECT_EQ(back.config_hashes, std::vector<std::string>{"abc"});
    ASSERT_EQ(back.records.size(), 30u);
    ASSERT_EQ(back.errors.size(), 1u);
    EXPECT_EQ(back.errors[0].code, ErrorCode::DimensionMismatch);
    std::size_t k = 0;
    for (const auto& r : results) {
        if (const auto* rec = std::get_if<ScoreRecord>(&r)) {
            EXPECT_EQ(back.records[k].sample_id, rec->sample_id);
            EXPECT_EQ(back.records[k].score, rec->score);
            EXPECT_EQ(back.records[k].mean, rec->mean);
            EXPECT_EQ(back.records[k].scored_tokens, rec->scored_tokens);
            ++k;
        }
    }
    results.push_back(results.front());
    canonicalize(results);
    EXPECT_EQ(first_duplicate_id(results), sample_id_of(results.front()));
}

TEST(ScoringConfig, Validation) {
    ScoringConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.lambda = 0.0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg.lambda = 1.5;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.eta = 0.6;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.w_m = 0.7;
    EXPECT_THROW(cfg.validate(), Error);
}
