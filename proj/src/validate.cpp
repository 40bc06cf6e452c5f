// SPDX-License-Identifier: Apache-2.0
#include "trim/validate.hpp"

#include "trim/error.hpp"
#include "trim/fingerprint.hpp"
#include "trim/interchange.hpp"

#include <json.hpp>

#include <cmath>
#include <unordered_set>

namespace trim {

bool ValidationReport::ok() const noexcept {
    for (const auto& c : checks) {
        if (!c.passed) return false;
    }
    return !checks.empty();
}

const CheckResult* ValidationReport::check(const std::string& name) const noexcept {
    for (const auto& c : checks) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

std::string ValidationReport::to_json() const {
    nlohmann::ordered_json j;
    j["path"] = path.string();
    j["kind"] = kind;
    j["ok"] = ok();
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
        nlohmann::ordered_json cj;
        cj["check"] = c.name;
        cj["passed"] = c.passed;
        cj["failures"] = c.failures;
        if (!c.first_offender.empty()) cj["first_offender"] = c.first_offender;
        if (!c.detail.empty()) cj["detail"] = c.detail;
        arr.push_back(std::move(cj));
    }
    j["checks"] = std::move(arr);
    return j.dump();
}

namespace {

class Checks {
public:
    explicit Checks(ValidationReport& report) : report_(report) {}

    CheckResult& get(const std::string& name) {
        for (auto& c : report_.checks) {
            if (c.name == name) return c;
        }
        CheckResult fresh;
        fresh.name = name;
        report_.checks.push_back(std::move(fresh));
        return report_.checks.back();
    }

    void fail(const std::string& name, const std::string& offender, const std::string& detail) {
        CheckResult& c = get(name);
        if (c.passed) {
            c.passed = false;
            c.first_offender = offender;
            c.detail = detail;
        }
        ++c.failures;
    }

private:
    ValidationReport& report_;
};

std::string record_label(std::uint64_t ordinal, const std::string& id) {
    return "record #" + std::to_string(ordinal) + " '" + id + "'";
}

bool all_finite(std::span<const float> values) {
    for (float v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void framing_failure(Checks& checks, const Error& e) {
    const std::string kind = e.code() == ErrorCode::Truncated ? "truncated" : "corrupt";
    checks.fail("framing", kind, e.what());
}

void check_attention(Checks& checks, const ValidationRecord& rec, std::uint64_t ordinal, double tolerance) {
    const std::size_t t = rec.length();
    const std::string label = record_label(ordinal, rec.sample_id);
    for (std::size_t l = 0; l < rec.layers; ++l) {
        for (std::size_t h = 0; h < rec.heads; ++h) {
            for (std::size_t i = 0; i < t; ++i) {
                const auto row = rec.attention_row(l, h, i);
                const std::string where =
                    label + " layer " + std::to_string(l) + " head " + std::to_string(h) + " row " + std::to_string(i);
                double sum = 0.0;
                bool negative = false;
                for (std::size_t j = 0; j <= i; ++j) {
                    sum += row[j];
                    negative = negative || row[j] < 0.0f;
                }
                for (std::size_t j = i + 1; j < t; ++j) {
                    if (row[j] != 0.0f) {
                        checks.fail("causal_support", where,
                                    "non-zero weight " + std::to_string(row[j]) + " at key " + std::to_string(j));
                        break;
                    }
                }
                if (sum == 0.0) {
                    checks.fail("nonzero_rows", where, "attention row is all zero");
                }
                if (negative || std::abs(sum - 1.0) > tolerance) {
                    checks.fail("row_stochastic", where, "row sums to " + std::to_string(sum));
                }
            }
        }
    }
}

template <typename Reader, typename Record, typename PerRecord>
void walk_records(Checks& checks, Reader& reader, PerRecord&& per_record) {
    Record rec;
    std::unordered_set<std::string> ids;
    std::uint64_t ordinal = 0;
    try {
        while (reader.next(rec)) {
            if (!ids.insert(rec.sample_id).second) {
                checks.fail("sample_ids", record_label(ordinal, rec.sample_id), "duplicate sample_id");
            }
            if (!all_finite(rec.hidden)) {
                checks.fail("finite", record_label(ordinal, rec.sample_id), "non-finite hidden state value");
            }
            per_record(rec, ordinal);
            ++ordinal;
        }
    } catch (const Error& e) {
        framing_failure(checks, e);
    }
}

void check_dimension(Checks& checks, std::uint32_t dim, const ValidateOptions& options) {
    checks.get("dimensions");
    if (options.expected_hidden_dim && *options.expected_hidden_dim != dim) {
        checks.fail("dimensions", "header",
                    "hidden dim " + std::to_string(dim) + " != expected " + std::to_string(*options.expected_hidden_dim));
    }
}

void validate_validation(Checks& checks, const std::filesystem::path& path, const ValidateOptions& options) {
    ValidationReader reader(path);
    checks.get("header");
    check_dimension(checks, reader.header().hidden_dim, options);
    for (const char* name : {"framing", "sample_ids", "finite", "row_stochastic", "causal_support", "nonzero_rows"}) {
        checks.get(name);
    }
    const double tol = reader.header().dtype == DType::F16 ? kRowSumToleranceF16 : kRowSumToleranceF32;
    walk_records<ValidationReader, ValidationRecord>(checks, reader, [&](const ValidationRecord& rec, std::uint64_t ord) {
        if (!all_finite(rec.attention)) {
            checks.fail("finite", record_label(ord, rec.sample_id), "non-finite attention value");
        }
        check_attention(checks, rec, ord, tol);
    });
}

void validate_candidate(Checks& checks, const std::filesystem::path& path, const ValidateOptions& options) {
    CandidateReader reader(path);
    checks.get("header");
    check_dimension(checks, reader.header().hidden_dim, options);
    for (const char* name : {"framing", "sample_ids", "finite"}) checks.get(name);
    walk_records<CandidateReader, CandidateRecord>(checks, reader, [](const CandidateRecord&, std::uint64_t) {});
}

void validate_embedding(Checks& checks, const std::filesystem::path& path) {
    checks.get("header");
    checks.get("framing");
    checks.get("finite");
    try {
        const EmbeddingTable table = read_embedding_file(path);
        for (const auto& [cls, vec] : table.entries) {
            if (!all_finite(vec)) {
                checks.fail("finite", "class " + std::to_string(cls), "non-finite embedding value");
            }
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::BadMagic || e.code() == ErrorCode::VersionMismatch) throw;
        framing_failure(checks, e);
    }
}

void validate_fingerprint(Checks& checks, const std::filesystem::path& path, const ValidateOptions& options) {
    checks.get("header");
    for (const char* name : {"framing", "dimensions", "unit_norm"}) checks.get(name);
    try {
        FingerprintExpectations expect;
        expect.hidden_dim = options.expected_hidden_dim;
        (void)load_fingerprints(path, expect);
    } catch (const Error& e) {
        switch (e.code()) {
        case ErrorCode::BadMagic:
        case ErrorCode::VersionMismatch: throw;
        case ErrorCode::DimensionMismatch: checks.fail("dimensions", "header/meta", e.what()); break;
        case ErrorCode::NormViolation: checks.fail("unit_norm", "entry", e.what()); break;
        default: framing_failure(checks, e); break;
        }
    }
}

} // namespace

ValidationReport validate_file(const std::filesystem::path& path, const ValidateOptions& options) {
    ValidationReport report;
    report.path = path;
    report.kind = "unknown";
    Checks checks(report);
    const auto magic = peek_magic(path);
    if (!magic) {
        checks.fail("header", "file", "missing or shorter than 4 bytes");
        return report;
    }
    try {
        if (*magic == kValidationMagic) {
            report.kind = "TRMV";
            validate_validation(checks, path, options);
        } else if (*magic == kCandidateMagic) {
            report.kind = "TRMC";
            validate_candidate(checks, path, options);
        } else if (*magic == kEmbeddingMagic) {
            report.kind = "TRME";
            validate_embedding(checks, path);
        } else if (*magic == kFingerprintMagic) {
            report.kind = "TRMF";
            validate_fingerprint(checks, path, options);
        } else {
            checks.fail("header", "magic", "unrecognized magic bytes");
        }
    } catch (const Error& e) {
        // header-level failures (bad version, dtype, truncated header)
        if (e.code() == ErrorCode::Truncated || e.code() == ErrorCode::CorruptFrame) {
            checks.get("header");
            framing_failure(checks, e);
        } else {
            checks.fail("header", "header", e.what());
        }
    } catch (const std::exception& e) {
        checks.fail("header", "file", e.what());
    }
    return report;
}

} // namespace trim
