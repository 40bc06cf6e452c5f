// SPDX-License-Identifier: Apache-2.0
#include "trim/selector.hpp"

#include "binary_io.hpp"
#include "trim/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace trim {

void Budget::validate() const {
    if (kind == Kind::TopK && count < 1) {
        throw Error(ErrorCode::InvalidConfig, "top-k budget must be >= 1");
    }
    if (kind == Kind::TopP && !(fraction > 0.0 && fraction <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "top-p budget must lie in (0, 1]");
    }
}

std::uint64_t Budget::resolve(std::uint64_t corpus_size) const {
    if (kind == Kind::TopK) {
        return count;
    }
    // the slack keeps products like 0.05 * 200 from rounding up to 11
    const double want = std::ceil(fraction * static_cast<double>(corpus_size) - 1e-9);
    return std::min<std::uint64_t>(corpus_size, static_cast<std::uint64_t>(std::max(0.0, want)));
}

bool ranks_before(double score_a, std::string_view id_a, double score_b, std::string_view id_b) noexcept {
    if (score_a != score_b) return score_a > score_b;
    return id_a < id_b;
}

TopKSelector::TopKSelector(std::uint64_t k) : k_(k) {}

void TopKSelector::offer(Entry entry) {
    if (k_ == 0) return;
    if (heap_.size() < k_) {
        heap_.push_back(std::move(entry));
        std::push_heap(heap_.begin(), heap_.end(), entry_before);
    } else if (entry_before(entry, heap_.front())) {
        std::pop_heap(heap_.begin(), heap_.end(), entry_before);
        heap_.back() = std::move(entry);
        std::push_heap(heap_.begin(), heap_.end(), entry_before);
    }
}

void TopKSelector::push(const ScoreRecord& record) {
    ++seen_;
    if (record.empty_scope()) {
        excluded_.push_back(record.sample_id);
        return;
    }
    // cheap rejection before copying strings
    if (heap_.size() == k_ &&
        (k_ == 0 || !ranks_before(record.score, record.sample_id, heap_.front().score, heap_.front().sample_id))) {
        return;
    }
    offer(Entry{record.score, record.sample_id, record.source});
}

void TopKSelector::merge(TopKSelector&& other) {
    seen_ += other.seen_;
    for (auto& e : other.heap_) offer(std::move(e));
    excluded_.insert(excluded_.end(), std::make_move_iterator(other.excluded_.begin()),
                     std::make_move_iterator(other.excluded_.end()));
    other.heap_.clear();
    other.excluded_.clear();
}

SelectionManifest TopKSelector::finish() && {
    std::sort(heap_.begin(), heap_.end(), entry_before);
    SelectionManifest out;
    out.corpus_size = seen_;
    out.requested = k_;
    out.selected.reserve(heap_.size());
    std::uint64_t rank = 1;
    for (auto& e : heap_) {
        out.selected.push_back(SelectionEntry{rank++, std::move(e.sample_id), e.score, std::move(e.source)});
    }
    std::sort(excluded_.begin(), excluded_.end());
    out.excluded = std::move(excluded_);
    return out;
}

SelectionManifest select_top(std::span<const ScoreRecord> scores, const Budget& budget) {
    budget.validate();
    TopKSelector selector(budget.resolve(scores.size()));
    for (const auto& s : scores) selector.push(s);
    return std::move(selector).finish();
}

void write_selection(const std::filesystem::path& path, const SelectionManifest& manifest) {
    detail::AtomicFile file(path);
    for (const auto& e : manifest.selected) {
        nlohmann::ordered_json j;
        j["rank"] = e.rank;
        j["sample_id"] = e.sample_id;
        j["S"] = e.score;
        j["source"] = e.source;
        if (!manifest.config_hash.empty()) j["config_hash"] = manifest.config_hash;
        const std::string line = j.dump() + "\n";
        file.write(line.data(), line.size());
    }
    file.commit();
}

SelectionManifest read_selection(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open selection " + path.string());
    }
    SelectionManifest out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.selected.push_back(SelectionEntry{j.at("rank").get<std::uint64_t>(),
                                                  j.at("sample_id").get<std::string>(), j.at("S").get<double>(),
                                                  j.value("source", std::string{})});
            const std::string hash = j.value("config_hash", std::string{});
            if (out.selected.size() == 1) {
                out.config_hash = hash;
            } else if (hash != out.config_hash) {
                throw Error(ErrorCode::ConfigMismatch,
                            path.string() + ":" + std::to_string(line_no) + ": selection mixes config hashes");
            }
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::CorruptFrame, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    out.requested = out.selected.size();
    return out;
}

} // namespace trim
