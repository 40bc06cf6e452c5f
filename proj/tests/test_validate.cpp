// SPDX-License-Identifier: Apache-2.0
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"
#include "trim/fingerprint.hpp"
#include "trim/validate.hpp"

#include <gtest/gtest.h>

using namespace trim;
using trim::testing::TempDir;

namespace {

struct Files {
    TempDir dir;
    std::filesystem::path trmv, trmc, trme, trmf;
    std::vector<ValidationRecord> val;
};

void make_files(Files& f, DType dtype = DType::F32) {
    std::mt19937_64 rng(21);
    const auto world = trim::testing::make_world(rng, 16, 4, 3);
    for (int i = 0; i < 3; ++i) {
        f.val.push_back(trim::testing::make_validation(rng, world, "v" + std::to_string(i), {6}, 2, 2));
    }
    std::vector<CandidateRecord> cand;
    for (int i = 0; i < 3; ++i) cand.push_back(trim::testing::make_candidate(rng, world, "c" + std::to_string(i), {7}));
    f.trmv = f.dir / "v.trmv";
    f.trmc = f.dir / "c.trmc";
    f.trme = f.dir / "e.trme";
    f.trmf = f.dir / "f.trmf";
    write_validation_file(f.trmv, f.val, FormatHeader{dtype, 4, 2, 2, 0});
    write_candidate_file(f.trmc, cand, dtype, 4);
    write_embedding_file(f.trme, world.embeddings, dtype);
    save_fingerprints(fingerprint_records(f.val, SaliencyConfig{}, ScoringScope::All), f.trmf);
}

bool failed(const ValidationReport& r, const std::string& check) {
    const auto* c = r.check(check);
    return c != nullptr && !c->passed;
}

} // namespace

TEST(Validate, AcceptsGeneratedFiles) {
    for (DType dtype : {DType::F32, DType::F16}) {
        Files f;
        make_files(f, dtype);
        for (const auto& p : {f.trmv, f.trmc, f.trme, f.trmf}) {
            const auto report = validate_file(p);
            EXPECT_TRUE(report.ok()) << report.to_json();
        }
        EXPECT_EQ(validate_file(f.trmv).kind, "TRMV");
        EXPECT_NE(validate_file(f.trmv).check("row_stochastic"), nullptr);
        EXPECT_EQ(validate_file(f.trmf).kind, "TRMF");
    }
}

TEST(Validate, BadMagic) {
    Files f;
    make_files(f);
    std::string bytes = trim::testing::slurp(f.trmc);
    bytes[1] = 'Z';
    trim::testing::spit(f.trmc, bytes);
    const auto r = validate_file(f.trmc);
    EXPECT_FALSE(r.ok());
    EXPECT_TRUE(failed(r, "header"));
}

TEST(Validate, Truncation) {
    Files f;
    make_files(f);
    const std::string bytes = trim::testing::slurp(f.trmv);
    trim::testing::spit(f.trmv, bytes.substr(0, bytes.size() - 7));
    const auto r = validate_file(f.trmv);
    EXPECT_TRUE(failed(r, "framing"));
    EXPECT_EQ(r.check("framing")->first_offender, "truncated");
}

TEST(Validate, RowSumViolation) {
    Files f;
    make_files(f);
    auto recs = f.val;
    recs[1].attention[0] = 0.5f; // row 0 of layer 0 head 0 is [1]
    write_validation_file(f.trmv, recs, FormatHeader{DType::F32, 4, 2, 2, 0});
    const auto r = validate_file(f.trmv);
    EXPECT_TRUE(failed(r, "row_stochastic"));
    EXPECT_FALSE(failed(r, "causal_support"));
    EXPECT_NE(r.check("row_stochastic")->first_offender.find("'v1'"), std::string::npos);
    EXPECT_EQ(r.check("row_stochastic")->failures, 1u);
}

TEST(Validate, RowSumToleranceDependsOnDtype) {
    Files f;
    make_files(f);
    auto recs = f.val;
    // row 1 of layer 0 head 0: keys 0 and 1. Shift 5e-4 of mass off the row.
    const std::size_t t = recs[0].length();
    recs[0].attention[t] -= 5e-4f;
    write_validation_file(f.trmv, recs, FormatHeader{DType::F32, 4, 2, 2, 0});
    EXPECT_TRUE(failed(validate_file(f.trmv), "row_stochastic"));
    write_validation_file(f.trmv, recs, FormatHeader{DType::F16, 4, 2, 2, 0});
    EXPECT_FALSE(failed(validate_file(f.trmv), "row_stochastic"));
}

TEST(Validate, CausalLeak) {
    Files f;
    make_files(f);
    auto recs = f.val;
    const std::size_t t = recs[2].length();
    // layer 1, head 1, row 0: move half the mass onto key 3
    float* row = recs[2].attention.data() + ((1 * 2 + 1) * t + 0) * t;
    row[0] = 0.5f;
    row[3] = 0.5f;
    write_validation_file(f.trmv, recs, FormatHeader{DType::F32, 4, 2, 2, 0});
    const auto r = validate_file(f.trmv);
    EXPECT_TRUE(failed(r, "causal_support"));
    EXPECT_TRUE(failed(r, "row_stochastic")); // the causal part now sums to 0.5
}

TEST(Validate, DimensionMismatch) {
    Files f;
    make_files(f);
    ValidateOptions opts;
    opts.expected_hidden_dim = 8;
    EXPECT_TRUE(failed(validate_file(f.trmc, opts), "dimensions"));
    EXPECT_TRUE(failed(validate_file(f.trmv, opts), "dimensions"));
    EXPECT_TRUE(failed(validate_file(f.trmf, opts), "dimensions"));
    opts.expected_hidden_dim = 4;
    EXPECT_TRUE(validate_file(f.trmc, opts).ok());
}

TEST(Validate, NormViolation) {
    Files f;
    make_files(f);
    auto dict = load_fingerprints(f.trmf);
    dict.entries.begin()->second.vector[0] += 0.01f;
    save_fingerprints(dict, f.trmf);
    const auto r = validate_file(f.trmf);
    EXPECT_TRUE(failed(r, "unit_norm"));
}

TEST(Validate, ZeroRowAndNonFinite) {
    Files f;
    make_files(f);
    auto recs = f.val;
    recs[0].attention[0] = 0.0f;
    recs[1].hidden[3] = std::numeric_limits<float>::quiet_NaN();
    write_validation_file(f.trmv, recs, FormatHeader{DType::F32, 4, 2, 2, 0});
    const auto r = validate_file(f.trmv);
    EXPECT_TRUE(failed(r, "nonzero_rows"));
    EXPECT_TRUE(failed(r, "finite"));
}

TEST(Validate, DuplicateSampleIds) {
    Files f;
    make_files(f);
    auto recs = f.val;
    recs[2].sample_id = "v0";
    write_validation_file(f.trmv, recs, FormatHeader{DType::F32, 4, 2, 2, 0});
    EXPECT_TRUE(failed(validate_file(f.trmv), "sample_ids"));
}

TEST(Validate, MissingOrUnknownFile) {
    TempDir dir;
    EXPECT_FALSE(validate_file(dir / "nope").ok());
    trim::testing::spit(dir / "junk", "JUNKJUNKJUNK");
    const auto r = validate_file(dir / "junk");
    EXPECT_FALSE(r.ok());
    EXPECT_EQ(r.kind, "unknown");
}
