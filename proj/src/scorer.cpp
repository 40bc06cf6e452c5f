// SPDX-License-Identifier: Apache-2.0
#include "trim/scorer.hpp"

#include "trim/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <future>
#include <mutex>
#include <thread>

namespace trim {

std::string_view to_string(OovPolicy policy) noexcept {
    return policy == OovPolicy::Skip ? "skip" : "backoff";
}

OovPolicy parse_oov_policy(std::string_view text) {
    if (text == "backoff") return OovPolicy::Backoff;
    if (text == "skip") return OovPolicy::Skip;
    throw Error(ErrorCode::InvalidConfig, "unknown OOV policy '" + std::string(text) + "'");
}

void ScoringConfig::validate() const {
    if (!(lambda > 0.0 && lambda <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "lambda must lie in (0, 1]");
    }
    if (!(w_mu >= 0.0) || !(w_m >= 0.0) || std::abs(w_mu + w_m - 1.0) > 1e-12) {
        throw Error(ErrorCode::InvalidConfig, "w_mu and w_m must be non-negative and sum to 1");
    }
    if (!(eta >= 0.0 && eta <= 0.5)) {
        throw Error(ErrorCode::InvalidConfig, "eta must lie in [0, 0.5]");
    }
}

// ---------------------------------------------------------------------------

namespace {
constexpr int kFixedPointBits = 60;
}

void TokenScorePool::add(double score) noexcept {
    sum_ += std::llround(std::ldexp(score, kFixedPointBits));
    ++count_;
    max_ = std::max(max_, score);
    min_ = std::min(min_, score);
}

double TokenScorePool::mean() const noexcept {
    if (count_ == 0) {
        return 0.0;
    }
    // sum/count as a value depends only on the rational, so the integer
    // quotient and the remainder fraction are identical for (k*sum, k*count).
    const auto n = static_cast<__int128>(count_);
    const __int128 quotient = sum_ / n;
    const __int128 remainder = sum_ % n;
    const double value = static_cast<double>(quotient) + static_cast<double>(remainder) / static_cast<double>(count_);
    return std::clamp(std::ldexp(value, -kFixedPointBits), min_, max_);
}

namespace {

void finish_record(ScoreRecord& rec, const TokenScorePool& pool, const ScoringConfig& cfg) {
    rec.scored_tokens = pool.count();
    if (pool.count() == 0) {
        rec.score = -std::numeric_limits<double>::infinity();
        rec.mean = rec.max = rec.coverage = 0.0;
        return;
    }
    rec.mean = pool.mean();
    rec.max = pool.max();
    rec.coverage = static_cast<double>(rec.scored_tokens) / static_cast<double>(rec.total_tokens);
    rec.score = cfg.w_mu * rec.mean + cfg.w_m * rec.max + cfg.eta * rec.coverage;
}

double unit_rows(std::span<const float> v, double* out) {
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * x;
    const double norm = std::sqrt(ss);
    for (std::size_t d = 0; d < v.size(); ++d) {
        out[d] = norm > 0.0 ? v[d] / norm : 0.0;
    }
    return norm;
}

} // namespace

ScoreRecord pool_token_scores(std::span<const double> scores, std::uint64_t total_tokens, const ScoringConfig& cfg) {
    TokenScorePool pool;
    for (double s : scores) pool.add(s);
    ScoreRecord rec;
    rec.total_tokens = total_tokens;
    finish_record(rec, pool, cfg);
    return rec;
}

// ---------------------------------------------------------------------------

OovResolver::OovResolver(const FingerprintDictionary& dict, const EmbeddingTable* embeddings)
    : table_(embeddings) {
    classes_.reserve(dict.entries.size());
    for (const auto& [cls, entry] : dict.entries) classes_.push_back(cls);
    if (table_ == nullptr) {
        return;
    }
    dim_ = table_->dim;
    unit_rows_.resize(classes_.size() * dim_);
    for (std::size_t k = 0; k < classes_.size(); ++k) {
        const auto* row = table_->find(classes_[k]);
        if (row == nullptr) {
            throw Error(ErrorCode::EmbeddingGap,
                        "fingerprinted class " + std::to_string(classes_[k]) + " has no input embedding");
        }
        unit_rows(*row, unit_rows_.data() + k * dim_);
    }
}

TokenClass OovResolver::resolve(TokenClass query) const {
    {
        std::shared_lock lock(mutex_);
        if (const auto it = cache_.find(query); it != cache_.end()) {
            return it->second;
        }
    }
    const TokenClass found = search(query);
    std::unique_lock lock(mutex_);
    cache_.try_emplace(query, found);
    return found;
}

std::size_t OovResolver::cached() const {
    std::shared_lock lock(mutex_);
    return cache_.size();
}

TokenClass OovResolver::search(TokenClass query) const {
    const std::vector<float>* row = table_ ? table_->find(query) : nullptr;
    if (row == nullptr) {
        throw Error(ErrorCode::EmbeddingGap, "no input embedding for token class " + std::to_string(query));
    }
    std::vector<double> unit(dim_);
    unit_rows(*row, unit.data());
    TokenClass best = classes_.front();
    double best_cos = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes_.size(); ++k) {
        const double* e = unit_rows_.data() + k * dim_;
        double dot = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) dot += unit[d] * e[d];
        if (dot > best_cos) { // strict: the lowest id keeps ties
            best_cos = dot;
            best = classes_[k];
        }
    }
    return best;
}

// ---------------------------------------------------------------------------

Scorer::Scorer(const FingerprintDictionary& dict, const EmbeddingTable* embeddings, ScoringConfig cfg)
    : cfg_(cfg), dim_(dict.meta.hidden_dim), resolver_(dict, embeddings) {
    cfg_.validate();
    if (cfg_.scope != dict.meta.scope) {
        throw Error(ErrorCode::ConfigMismatch, "scoring scope '" + std::string(to_string(cfg_.scope)) +
                                                   "' differs from fingerprint scope '" +
                                                   std::string(to_string(dict.meta.scope)) + "'");
    }
    if (dict.entries.empty()) {
        throw Error(ErrorCode::NoFingerprints, "fingerprint dictionary is empty");
    }
    slot_of_class_.assign(static_cast<std::size_t>(dict.entries.rbegin()->first) + 1, -1);
    rows_.reserve(dict.entries.size() * dim_);
    for (const auto& [cls, entry] : dict.entries) {
        if (entry.vector.size() != dim_) {
            throw Error(ErrorCode::DimensionMismatch, "fingerprint " + std::to_string(cls) + " has wrong dimension");
        }
        slot_of_class_[cls] = static_cast<std::int32_t>(inv_norms_.size());
        double ss = 0.0;
        for (float x : entry.vector) {
            rows_.push_back(x);
            ss += static_cast<double>(x) * x;
        }
        inv_norms_.push_back(1.0 / std::sqrt(ss));
    }
}

const double* Scorer::fingerprint(TokenClass cls) const noexcept {
    if (cls >= slot_of_class_.size() || slot_of_class_[cls] < 0) {
        return nullptr;
    }
    return rows_.data() + static_cast<std::size_t>(slot_of_class_[cls]) * dim_;
}

std::optional<TokenScore> Scorer::token_score(std::span<const float> hidden, TokenClass cls) const {
    if (hidden.size() != dim_) {
        throw Error(ErrorCode::DimensionMismatch,
                    "hidden dim " + std::to_string(hidden.size()) + " != fingerprint dim " + std::to_string(dim_));
    }
    TokenClass target = cls;
    bool oov = false;
    const double* f = fingerprint(cls);
    if (f == nullptr) {
        if (cfg_.oov == OovPolicy::Skip) {
            return std::nullopt;
        }
        target = resolver_.resolve(cls);
        f = fingerprint(target);
        oov = true;
    }
    double ss = 0.0;
    double dot = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) {
        const double h = hidden[d];
        ss += h * h;
        dot += h * f[d];
    }
    if (ss == 0.0) {
        return std::nullopt;
    }
    const double cosine = dot / std::sqrt(ss) * inv_norms_[static_cast<std::size_t>(slot_of_class_[target])];
    return TokenScore{oov ? cfg_.lambda * cosine : cosine, oov};
}

ScoreRecord Scorer::score(const CandidateRecord& record) const {
    if (record.hidden_dim != dim_) {
        throw Error(ErrorCode::DimensionMismatch, "record '" + record.sample_id + "' has hidden dim " +
                                                      std::to_string(record.hidden_dim) + ", fingerprints have " +
                                                      std::to_string(dim_));
    }
    const std::size_t t = record.length();
    if (record.roles.size() != t || record.hidden.size() != t * dim_) {
        throw Error(ErrorCode::LengthMismatch, "record '" + record.sample_id + "' arrays disagree on length");
    }
    ScoreRecord rec;
    rec.sample_id = record.sample_id;
    rec.total_tokens = t;
    TokenScorePool pool;
    for (std::size_t j = 0; j < t; ++j) {
        if (!in_scope(record.roles[j], cfg_.scope)) continue;
        if (cfg_.oov == OovPolicy::Skip && fingerprint(record.token_ids[j]) == nullptr) continue;
        const auto s = token_score(record.hidden_at(j), record.token_ids[j]);
        if (!s) {
            ++rec.zero_norm_tokens;
            continue;
        }
        pool.add(s->value);
        rec.oov_tokens += s->oov ? 1 : 0;
    }
    finish_record(rec, pool, cfg_);
    return rec;
}

// ---------------------------------------------------------------------------

FileSetSource::FileSetSource(std::vector<std::filesystem::path> files) : files_(std::move(files)) {}

bool FileSetSource::next(CandidateRecord& out) {
    while (true) {
        if (!reader_) {
            if (index_ == files_.size()) return false;
            reader_.emplace(files_[index_++]);
        }
        if (reader_->next(out)) return true;
        reader_.reset();
    }
}

namespace {

ScoreResult score_one(const Scorer& scorer, const CandidateRecord& record, const CorpusManifest* manifest) {
    try {
        ScoreRecord rec = scorer.score(record);
        if (manifest != nullptr) {
            if (const auto* entry = manifest->find(rec.sample_id)) rec.source = entry->source;
        }
        return rec;
    } catch (const Error& e) {
        return RecordError{record.sample_id, e.code(), e.what()};
    }
}

using Batch = std::vector<CandidateRecord>;
using BatchResult = std::vector<ScoreResult>;

class WorkerPool {
public:
    explicit WorkerPool(unsigned workers) {
        for (unsigned i = 0; i < workers; ++i) {
            threads_.emplace_back([this] { run(); });
        }
    }
    ~WorkerPool() {
        {
            std::lock_guard lock(mutex_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    std::future<BatchResult> submit(std::packaged_task<BatchResult()> task) {
        auto fut = task.get_future();
        {
            std::lock_guard lock(mutex_);
            tasks_.push_back(std::move(task));
        }
        cv_.notify_one();
        return fut;
    }

private:
    void run() {
        while (true) {
            std::packaged_task<BatchResult()> task;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [this] { return stopping_ || !tasks_.empty(); });
                if (stopping_ && tasks_.empty()) return;
                task = std::move(tasks_.front());
                tasks_.pop_front();
            }
            task();
        }
    }

    std::vector<std::thread> threads_;
    std::deque<std::packaged_task<BatchResult()>> tasks_;
    std::mutex mutex_;
    std::condition_variable cv_;
    bool stopping_ = false;
};

} // namespace

CorpusStats score_corpus(CandidateSource& source, const Scorer& scorer, const CorpusOptions& options,
                         const std::function<void(ScoreResult&&)>& sink) {
    const auto started = std::chrono::steady_clock::now();
    CorpusStats stats;

    auto emit = [&](ScoreResult&& result) {
        ++stats.records;
        if (const auto* err = std::get_if<RecordError>(&result)) {
            ++stats.errors;
            if (options.strict) {
                throw Error(err->code, "sample '" + err->sample_id + "': " + err->message);
            }
        } else {
            const auto& rec = std::get<ScoreRecord>(result);
            stats.empty_scope += rec.empty_scope() ? 1 : 0;
            stats.total_tokens += rec.total_tokens;
            stats.scored_tokens += rec.scored_tokens;
            stats.oov_tokens += rec.oov_tokens;
            stats.zero_norm_tokens += rec.zero_norm_tokens;
        }
        sink(std::move(result));
    };

    if (options.workers <= 1) {
        CandidateRecord record;
        while (source.next(record)) {
            emit(score_one(scorer, record, options.manifest));
        }
    } else {
        const std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
        const std::size_t max_in_flight = 2 * static_cast<std::size_t>(options.workers);
        WorkerPool pool(options.workers);
        std::deque<std::future<BatchResult>> in_flight;

        auto drain_front = [&] {
            BatchResult results = in_flight.front().get();
            in_flight.pop_front();
            for (auto& r : results) emit(std::move(r));
        };

        bool more = true;
        while (more) {
            auto batch = std::make_shared<Batch>();
            batch->reserve(batch_size);
            CandidateRecord record;
            while (batch->size() < batch_size && (more = source.next(record))) {
                batch->push_back(std::move(record));
                record = CandidateRecord{};
            }
            if (batch->empty()) break;
            in_flight.push_back(pool.submit(std::packaged_task<BatchResult()>([batch, &scorer, &options] {
                BatchResult out;
                out.reserve(batch->size());
                for (const auto& rec : *batch) out.push_back(score_one(scorer, rec, options.manifest));
                return out;
            })));
            if (in_flight.size() >= max_in_flight) drain_front();
        }
        while (!in_flight.empty()) drain_front();
    }

    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return stats;
}

} // namespace trim
