// SPDX-License-Identifier: Apache-2.0
#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace trim::testing {

World make_world(std::mt19937_64& rng, std::uint32_t vocab, std::uint32_t dim, std::uint32_t embedding_dim) {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    World w;
    w.vocab = vocab;
    w.dim = dim;
    w.prototypes.assign(vocab, std::vector<float>(dim));
    for (auto& p : w.prototypes) {
        for (auto& x : p) x = normal(rng);
    }
    w.embeddings.dim = embedding_dim;
    for (std::uint32_t c = 0; c < vocab; ++c) {
        std::vector<float> row(embedding_dim);
        for (auto& x : row) x = normal(rng);
        w.embeddings.entries.emplace(c, std::move(row));
    }
    return w;
}

std::vector<Role> make_roles(std::size_t length) {
    std::vector<Role> roles(length, Role::Response);
    if (length > 0) roles[0] = Role::Special;
    const std::size_t prompt_end = 1 + (length > 1 ? (length - 1) / 2 : 0);
    for (std::size_t i = 1; i < prompt_end && i < length; ++i) roles[i] = Role::Prompt;
    return roles;
}

namespace {

template <typename Rec>
void fill_tokens(std::mt19937_64& rng, const World& world, Rec& rec, const RecordShape& shape) {
    const std::uint32_t limit = shape.vocab_limit == 0 ? world.vocab : shape.vocab_limit;
    std::uniform_int_distribution<std::uint32_t> pick(0, limit - 1);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    rec.hidden_dim = world.dim;
    rec.token_ids.resize(shape.length);
    rec.roles = make_roles(shape.length);
    rec.hidden.resize(shape.length * world.dim);
    for (std::size_t i = 0; i < shape.length; ++i) {
        const std::uint32_t c = pick(rng);
        rec.token_ids[i] = c;
        for (std::uint32_t d = 0; d < world.dim; ++d) {
            rec.hidden[i * world.dim + d] = world.prototypes[c][d] + shape.noise * normal(rng);
        }
    }
}

} // namespace

CandidateRecord make_candidate(std::mt19937_64& rng, const World& world, const std::string& id,
                               const RecordShape& shape) {
    CandidateRecord rec;
    rec.sample_id = id;
    fill_tokens(rng, world, rec, shape);
    return rec;
}

std::vector<float> softmax_row(std::mt19937_64& rng, std::size_t keys, float logit_scale) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> logits(keys);
    double hi = -INFINITY;
    for (auto& l : logits) {
        l = logit_scale * normal(rng);
        hi = std::max(hi, l);
    }
    double sum = 0.0;
    for (auto& l : logits) {
        l = std::exp(l - hi);
        sum += l;
    }
    std::vector<float> row(keys);
    for (std::size_t j = 0; j < keys; ++j) row[j] = static_cast<float>(logits[j] / sum);
    return row;
}

ValidationRecord make_validation(std::mt19937_64& rng, const World& world, const std::string& id,
                                 const RecordShape& shape, std::uint32_t layers, std::uint32_t heads,
                                 float logit_scale) {
    ValidationRecord rec;
    rec.sample_id = id;
    fill_tokens(rng, world, rec, shape);
    rec.layers = layers;
    rec.heads = heads;
    const std::size_t t = shape.length;
    rec.attention.assign(std::size_t{layers} * heads * t * t, 0.0f);
    for (std::uint32_t l = 0; l < layers; ++l) {
        for (std::uint32_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < t; ++i) {
                const auto row = softmax_row(rng, i + 1, logit_scale);
                float* dst = rec.attention.data() + ((std::size_t{l} * heads + h) * t + i) * t;
                std::copy(row.begin(), row.end(), dst);
            }
        }
    }
    return rec;
}

std::string sample_name(const std::string& prefix, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu", index);
    return prefix + buf;
}

} // namespace trim::testing
