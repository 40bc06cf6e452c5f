// SPDX-License-Identifier: Apache-2.0
#include "trim/error.hpp"
#include "trim/selector.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>

namespace trim {

namespace {

std::string fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

double percent(std::uint64_t part, std::uint64_t whole) {
    return whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

LengthSummary summarize(std::vector<std::uint64_t> lengths) {
    LengthSummary s;
    s.count = lengths.size();
    if (lengths.empty()) return s;
    std::sort(lengths.begin(), lengths.end());
    double sum = 0.0;
    for (auto n : lengths) sum += static_cast<double>(n);
    s.mean = sum / static_cast<double>(lengths.size());
    const std::size_t mid = lengths.size() / 2;
    s.median = lengths.size() % 2 == 1 ? static_cast<double>(lengths[mid])
                                       : 0.5 * (static_cast<double>(lengths[mid - 1]) + static_cast<double>(lengths[mid]));
    return s;
}

const ManifestEntry& lookup(const CorpusManifest& corpus, const std::string& id) {
    const ManifestEntry* e = corpus.find(id);
    if (e == nullptr) {
        throw Error(ErrorCode::MissingManifestEntry, "selected sample '" + id + "' is not in the corpus manifest");
    }
    return *e;
}

nlohmann::ordered_json summary_json(const LengthSummary& s) {
    nlohmann::ordered_json j;
    j["count"] = s.count;
    j["mean"] = s.mean;
    j["median"] = s.median;
    return j;
}

} // namespace

LengthReport length_report(const SelectionManifest& selection, const CorpusManifest& corpus,
                           std::span<const std::uint64_t> edges) {
    if (edges.empty() || edges.front() != 0 || !std::is_sorted(edges.begin(), edges.end(), std::less_equal<>())) {
        throw Error(ErrorCode::InvalidConfig, "length bucket edges must start at 0 and increase strictly");
    }
    LengthReport report;
    for (std::size_t b = 0; b < edges.size(); ++b) {
        LengthBucket bucket;
        bucket.lo = edges[b];
        bucket.open_ended = b + 1 == edges.size();
        bucket.hi = bucket.open_ended ? 0 : edges[b + 1];
        report.buckets.push_back(bucket);
    }
    auto bucket_of = [&](std::uint64_t n) -> LengthBucket& {
        const auto it = std::upper_bound(edges.begin(), edges.end(), n);
        return report.buckets[static_cast<std::size_t>(it - edges.begin()) - 1];
    };

    std::vector<std::uint64_t> selected_lengths;
    for (const auto& e : selection.selected) {
        const auto n = lookup(corpus, e.sample_id).n_tokens;
        selected_lengths.push_back(n);
        ++bucket_of(n).selected;
    }
    std::vector<std::uint64_t> pool_lengths;
    for (const auto& e : corpus.entries()) {
        pool_lengths.push_back(e.n_tokens);
        ++bucket_of(e.n_tokens).pool;
    }
    for (auto& b : report.buckets) {
        b.selected_pct = percent(b.selected, selected_lengths.size());
        b.pool_pct = percent(b.pool, pool_lengths.size());
    }
    report.selected = summarize(std::move(selected_lengths));
    report.pool = summarize(std::move(pool_lengths));
    return report;
}

std::string LengthReport::to_csv() const {
    std::string out = "bucket,lo,hi,selected_count,selected_pct,pool_count,pool_pct\n";
    for (const auto& b : buckets) {
        const std::string hi = b.open_ended ? "inf" : std::to_string(b.hi);
        out += "[" + std::to_string(b.lo) + "-" + hi + ")," + std::to_string(b.lo) + "," + hi + "," +
               std::to_string(b.selected) + "," + fixed(b.selected_pct) + "," + std::to_string(b.pool) + "," +
               fixed(b.pool_pct) + "\n";
    }
    return out;
}

std::string LengthReport::summary_csv() const {
    std::string out = "set,count,mean,median\n";
    out += "selected," + std::to_string(selected.count) + "," + fixed(selected.mean) + "," + fixed(selected.median) + "\n";
    out += "pool," + std::to_string(pool.count) + "," + fixed(pool.mean) + "," + fixed(pool.median) + "\n";
    return out;
}

std::string LengthReport::to_json() const {
    nlohmann::ordered_json j;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : buckets) {
        nlohmann::ordered_json bj;
        bj["lo"] = b.lo;
        bj["hi"] = b.open_ended ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(b.hi);
        bj["selected_count"] = b.selected;
        bj["selected_pct"] = b.selected_pct;
        bj["pool_count"] = b.pool;
        bj["pool_pct"] = b.pool_pct;
        arr.push_back(std::move(bj));
    }
    j["buckets"] = std::move(arr);
    j["selected"] = summary_json(selected);
    j["pool"] = summary_json(pool);
    return j.dump(2) + "\n";
}

SubsetReport subset_report(const SelectionManifest& selection, const CorpusManifest& corpus) {
    std::map<std::string, SourceShare> shares;
    for (const auto& e : corpus.entries()) {
        auto& s = shares[e.source];
        s.source = e.source;
        ++s.pool;
    }
    for (const auto& e : selection.selected) {
        ++shares[lookup(corpus, e.sample_id).source].selected;
    }
    SubsetReport report;
    for (auto& [name, s] : shares) {
        s.selected_pct = percent(s.selected, selection.selected.size());
        s.pool_pct = percent(s.pool, corpus.size());
        report.sources.push_back(s);
    }
    return report;
}

std::string SubsetReport::to_csv() const {
    std::string out = "source,selected_count,selected_pct,pool_count,pool_pct\n";
    for (const auto& s : sources) {
        out += s.source + "," + std::to_string(s.selected) + "," + fixed(s.selected_pct) + "," +
               std::to_string(s.pool) + "," + fixed(s.pool_pct) + "\n";
    }
    return out;
}

std::string SubsetReport::to_json() const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& s : sources) {
        nlohmann::ordered_json j;
        j["source"] = s.source;
        j["selected_count"] = s.selected;
        j["selected_pct"] = s.selected_pct;
        j["pool_count"] = s.pool;
        j["pool_pct"] = s.pool_pct;
        arr.push_back(std::move(j));
    }
    nlohmann::ordered_json j;
    j["sources"] = std::move(arr);
    return j.dump(2) + "\n";
}

} // namespace trim
