// SPDX-License-Identifier: Apache-2.0
#include "trim/fingerprint.hpp"

#include "binary_io.hpp"
#include "trim/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <tuple>

namespace trim {

std::string_view to_string(ScoringScope scope) noexcept {
    switch (scope) {
    case ScoringScope::All: return "all";
    case ScoringScope::PromptOnly: return "prompt";
    case ScoringScope::ResponseOnly: return "response";
    }
    return "unknown";
}

ScoringScope parse_scope(std::string_view text) {
    if (text == "all") return ScoringScope::All;
    if (text == "prompt") return ScoringScope::PromptOnly;
    if (text == "response") return ScoringScope::ResponseOnly;
    throw Error(ErrorCode::InvalidConfig, "unknown scope '" + std::string(text) + "'");
}

namespace {

double norm_of(std::span<const float> v) {
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * x;
    return std::sqrt(ss);
}

double norm_of(const std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    return std::sqrt(ss);
}

constexpr double kDegenerateNorm = 1e-10;

nlohmann::ordered_json meta_to_json(const FingerprintMeta& m) {
    nlohmann::ordered_json j;
    j["D"] = m.hidden_dim;
    j["layers_used"] = m.layers_used;
    j["w_q"] = m.w_q;
    j["w_k"] = m.w_k;
    j["epsilon"] = m.epsilon;
    j["scope"] = std::string(to_string(m.scope));
    j["builder_version"] = m.builder_version;
    j["validation_sample_ids"] = m.validation_sample_ids;
    j["dropped_classes"] = m.dropped_classes;
    j["zero_norm_dropped"] = m.zero_norm_dropped;
    j["config_hash"] = m.config_hash;
    return j;
}

FingerprintMeta meta_from_json(const nlohmann::json& j) {
    FingerprintMeta m;
    m.hidden_dim = j.at("D").get<std::uint32_t>();
    m.layers_used = j.at("layers_used").get<std::size_t>();
    m.w_q = j.at("w_q").get<double>();
    m.w_k = j.at("w_k").get<double>();
    m.epsilon = j.at("epsilon").get<double>();
    m.scope = parse_scope(j.at("scope").get<std::string>());
    m.builder_version = j.at("builder_version").get<std::string>();
    m.validation_sample_ids = j.at("validation_sample_ids").get<std::vector<std::string>>();
    m.dropped_classes = j.at("dropped_classes").get<std::vector<TokenClass>>();
    m.zero_norm_dropped = j.at("zero_norm_dropped").get<std::size_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    return m;
}

} // namespace

OccurrenceSet collect_occurrences(std::span<const ValidationRecord> records, std::span<const SaliencyMap> saliency,
                                  ScoringScope scope) {
    if (records.size() != saliency.size()) {
        throw Error(ErrorCode::LengthMismatch, "got " + std::to_string(records.size()) + " records but " +
                                                   std::to_string(saliency.size()) + " saliency maps");
    }
    OccurrenceSet out;
    for (std::size_t r = 0; r < records.size(); ++r) {
        const ValidationRecord& rec = records[r];
        const SaliencyMap& sal = saliency[r];
        const std::size_t t = rec.length();
        if (sal.alpha.size() != t || rec.roles.size() != t || rec.hidden.size() != t * rec.hidden_dim) {
            throw Error(ErrorCode::LengthMismatch, "sample '" + rec.sample_id + "': saliency/record lengths disagree");
        }
        if (out.sample_ids.empty()) {
            out.hidden_dim = rec.hidden_dim;
        } else if (rec.hidden_dim != out.hidden_dim) {
            throw Error(ErrorCode::DimensionMismatch, "sample '" + rec.sample_id + "' has hidden dim " +
                                                          std::to_string(rec.hidden_dim));
        }
        if (std::find(out.sample_ids.begin(), out.sample_ids.end(), rec.sample_id) != out.sample_ids.end()) {
            throw Error(ErrorCode::DuplicateSample, "validation sample '" + rec.sample_id + "' appears twice");
        }
        out.sample_ids.push_back(rec.sample_id);
        for (std::size_t i = 0; i < t; ++i) {
            if (!in_scope(rec.roles[i], scope)) continue;
            const auto h = rec.hidden_at(i);
            if (norm_of(h) == 0.0) {
                ++out.zero_norm_dropped;
                continue;
            }
            out.by_class[rec.token_ids[i]].push_back(
                Occurrence{rec.sample_id, static_cast<std::uint32_t>(i), sal.alpha[i], {h.begin(), h.end()}});
        }
    }
    return out;
}

FingerprintDictionary build_fingerprints(const OccurrenceSet& occurrences, FingerprintMeta meta) {
    if (occurrences.by_class.empty()) {
        throw Error(ErrorCode::NoFingerprints, "no in-scope occurrences to fingerprint");
    }
    const std::size_t dim = occurrences.hidden_dim;
    FingerprintDictionary dict;
    std::vector<const Occurrence*> ordered;
    std::vector<double> weighted(dim);
    std::vector<double> plain(dim);

    for (const auto& [cls, list] : occurrences.by_class) {
        ordered.clear();
        for (const auto& occ : list) ordered.push_back(&occ);
        std::sort(ordered.begin(), ordered.end(), [](const Occurrence* a, const Occurrence* b) {
            return std::tie(a->sample_id, a->position) < std::tie(b->sample_id, b->position);
        });

        std::fill(weighted.begin(), weighted.end(), 0.0);
        std::fill(plain.begin(), plain.end(), 0.0);
        double weight_sum = 0.0;
        for (const Occurrence* occ : ordered) {
            const double inv = 1.0 / norm_of(occ->hidden);
            for (std::size_t d = 0; d < dim; ++d) {
                const double unit = occ->hidden[d] * inv;
                weighted[d] += occ->alpha * unit;
                plain[d] += unit;
            }
            weight_sum += occ->alpha;
        }

        const std::vector<double>* direction = &weighted;
        double norm = norm_of(weighted);
        if (norm < kDegenerateNorm) {
            // all weights zero or the weighted states cancel: use the plain mean
            direction = &plain;
            norm = norm_of(plain);
            if (norm / static_cast<double>(ordered.size()) < kDegenerateNorm) {
                meta.dropped_classes.push_back(cls);
                continue;
            }
        }
        FingerprintEntry entry;
        entry.vector.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            entry.vector[d] = static_cast<float>((*direction)[d] / norm);
        }
        entry.occurrence_count = static_cast<std::uint32_t>(ordered.size());
        entry.weight_sum = static_cast<float>(weight_sum);
        dict.entries.emplace(cls, std::move(entry));
    }

    if (dict.entries.empty()) {
        throw Error(ErrorCode::NoFingerprints, "every token class degenerated to a zero direction");
    }
    meta.hidden_dim = static_cast<std::uint32_t>(dim);
    meta.zero_norm_dropped = occurrences.zero_norm_dropped;
    if (meta.validation_sample_ids.empty()) {
        meta.validation_sample_ids = occurrences.sample_ids;
    }
    std::sort(meta.validation_sample_ids.begin(), meta.validation_sample_ids.end());
    if (meta.builder_version.empty()) {
        meta.builder_version = std::string(kBuilderVersion);
    }
    dict.meta = std::move(meta);
    return dict;
}

FingerprintDictionary fingerprint_records(std::span<const ValidationRecord> records, const SaliencyConfig& saliency,
                                          ScoringScope scope, std::string config_hash) {
    saliency.validate();
    std::vector<SaliencyMap> maps;
    maps.reserve(records.size());
    std::size_t layers_used = saliency.layers;
    for (const auto& rec : records) {
        maps.push_back(aggregated_saliency(rec, saliency));
        layers_used = std::min(layers_used, saliency.effective_layers(rec.layers));
    }
    FingerprintMeta meta;
    meta.layers_used = records.empty() ? 0 : layers_used;
    meta.w_q = saliency.w_q;
    meta.w_k = saliency.w_k;
    meta.epsilon = saliency.epsilon;
    meta.scope = scope;
    meta.config_hash = std::move(config_hash);
    return build_fingerprints(collect_occurrences(records, maps, scope), std::move(meta));
}

void save_fingerprints(const FingerprintDictionary& dict, const std::filesystem::path& path) {
    using detail::append_le;
    const std::uint32_t dim = dict.meta.hidden_dim;
    std::vector<std::uint8_t> buf;
    detail::append_bytes(buf, kFingerprintMagic.data(), 4);
    append_le(buf, kFormatVersion);
    append_le(buf, dim);
    buf.push_back(static_cast<std::uint8_t>(dict.meta.scope));
    append_le(buf, static_cast<std::uint64_t>(dict.entries.size()));
    const std::string meta = meta_to_json(dict.meta).dump();
    append_le(buf, static_cast<std::uint32_t>(meta.size()));
    detail::append_bytes(buf, meta.data(), meta.size());
    for (const auto& [cls, entry] : dict.entries) {
        if (entry.vector.size() != dim) {
            throw Error(ErrorCode::DimensionMismatch, "fingerprint for class " + std::to_string(cls) +
                                                          " has dimension " + std::to_string(entry.vector.size()));
        }
        append_le(buf, cls);
        append_le(buf, entry.occurrence_count);
        append_le(buf, entry.weight_sum);
        detail::append_values(buf, entry.vector, DType::F32);
    }
    detail::AtomicFile file(path);
    file.write(buf);
    file.commit();
}

FingerprintDictionary load_fingerprints(const std::filesystem::path& path, const FingerprintExpectations& expect) {
    detail::BinaryReader in(path);
    in.expect_header(kFingerprintMagic, "TRMF");
    const auto dim = in.read_le<std::uint32_t>("D");
    const auto scope_code = in.read_le<std::uint8_t>("scope");
    if (scope_code > 2) {
        throw Error(ErrorCode::CorruptFrame, path.string() + ": unknown scope code " + std::to_string(scope_code));
    }
    const auto count = in.read_le<std::uint64_t>("class_count");
    const auto meta_len = in.read_le<std::uint32_t>("meta length");
    std::string meta_text(meta_len, '\0');
    in.read(meta_text.data(), meta_len, "meta");

    FingerprintDictionary dict;
    try {
        dict.meta = meta_from_json(nlohmann::json::parse(meta_text));
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::CorruptFrame, path.string() + ": bad meta blob: " + ex.what());
    }
    if (dict.meta.hidden_dim != dim) {
        throw Error(ErrorCode::DimensionMismatch, path.string() + ": meta D " + std::to_string(dict.meta.hidden_dim) +
                                                      " disagrees with header D " + std::to_string(dim));
    }
    if (static_cast<std::uint8_t>(dict.meta.scope) != scope_code) {
        throw Error(ErrorCode::CorruptFrame, path.string() + ": meta scope disagrees with header scope");
    }
    if (expect.hidden_dim && *expect.hidden_dim != dim) {
        throw Error(ErrorCode::DimensionMismatch, path.string() + ": expected D " +
                                                      std::to_string(*expect.hidden_dim) + ", file has " +
                                                      std::to_string(dim));
    }
    if (expect.scope && *expect.scope != dict.meta.scope) {
        throw Error(ErrorCode::ConfigMismatch, path.string() + ": fingerprints built with scope '" +
                                                   std::string(to_string(dict.meta.scope)) + "', expected '" +
                                                   std::string(to_string(*expect.scope)) + "'");
    }

    std::optional<TokenClass> previous;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string ctx = "entry #" + std::to_string(i) + " (offset " + std::to_string(in.offset()) + ")";
        const auto cls = in.read_le<std::uint32_t>(ctx + " class");
        FingerprintEntry entry;
        entry.occurrence_count = in.read_le<std::uint32_t>(ctx + " occurrence_count");
        entry.weight_sum = in.read_le<float>(ctx + " weight_sum");
        entry.vector.resize(dim);
        in.read_values(DType::F32, dim, entry.vector.data(), ctx + " vector");
        if (previous && cls <= *previous) {
            throw Error(ErrorCode::CorruptFrame, path.string() + ": " + ctx + " class ids not strictly ascending");
        }
        if (entry.occurrence_count == 0 || !(entry.weight_sum >= 0.0f) || !std::isfinite(entry.weight_sum)) {
            throw Error(ErrorCode::CorruptFrame, path.string() + ": " + ctx + " has invalid occurrence stats");
        }
        const double norm = norm_of(entry.vector);
        if (!(std::abs(norm - 1.0) <= kUnitNormTolerance)) {
            throw Error(ErrorCode::NormViolation, path.string() + ": class " + std::to_string(cls) +
                                                      " fingerprint norm " + std::to_string(norm));
        }
        previous = cls;
        dict.entries.emplace(cls, std::move(entry));
    }
    if (in.remaining() != 0) {
        throw Error(ErrorCode::CorruptFrame, path.string() + ": trailing bytes after last entry");
    }
    return dict;
}

} // namespace trim
