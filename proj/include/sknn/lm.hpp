#pragma once

#include "sknn/common.hpp"
#include "sknn/corpus.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sknn {

// Reference language model: position-weighted embedding average into one tanh
// hidden layer, softmax output. The hidden activation doubles as the context
// encoding f(c) that keys the datastore, so hidden_dim is the key dimension.
// Paper-scale systems put a 16-layer transformer here; anything with a
// deterministic encoder and a normalized next-token distribution can be
// swapped in behind this interface.
struct LMConfig {
    std::uint32_t context_window = 16;
    std::uint32_t embedding_dim = 32;
    std::uint32_t hidden_dim = 64; // datastore key dimension
    std::uint32_t vocab_size = 0;
    double learning_rate = 0.05;
    std::uint32_t epochs = 20;
    std::uint32_t batch_size = 32;
    std::uint64_t seed = 1;

    void validate() const;
    void serialize(ByteWriter& w) const;
    static LMConfig deserialize(ByteReader& r);
};

struct LMParameters {
    LMConfig config;
    std::vector<double> embed;      // vocab_size x embedding_dim, row-major
    std::vector<double> pos_weight; // context_window, all-ones at init
    std::vector<double> w1;         // hidden_dim x embedding_dim
    std::vector<double> b1;         // hidden_dim
    std::vector<double> w2;         // vocab_size x hidden_dim
    std::vector<double> b2;         // vocab_size

    bool finite() const;
};

// Same shapes as LMParameters; accumulated by the backward pass.
struct LMGradient {
    std::vector<double> embed, pos_weight, w1, b1, w2, b2;

    explicit LMGradient(const LMConfig& config);
    void clear();
    void scale(double s);
};

LMParameters init_lm(const LMConfig& config);

// Fills `window` (size N) with the last N context tokens, BOS-padded on the
// left. Shared by the encoder, the trainer, and the datastore builder.
void context_window(std::span<const std::uint32_t> context, std::uint32_t n,
                    std::span<std::uint32_t> window);

// Context encoding f(c): the pre-output hidden activation, dimension hidden_dim.
std::vector<double> encode(const LMParameters& params, std::span<const std::uint32_t> context);
void encode_into(const LMParameters& params, std::span<const std::uint32_t> context,
                 std::span<double> out);

// softmax(W2 f(c) + b2); entries strictly positive, sums to 1.
std::vector<double> lm_distribution(const LMParameters& params,
                                    std::span<const std::uint32_t> context);

// One scored position, context already materialized as an N-token window.
struct TrainExample {
    std::vector<std::uint32_t> window;
    std::uint32_t target = 0;
};

std::vector<TrainExample> make_examples(const LMParameters& params,
                                        std::span<const Document> docs);

// Mean NLL over the batch; when grad != nullptr it receives the mean gradient.
double lm_batch_loss(const LMParameters& params, std::span<const TrainExample> batch,
                     LMGradient* grad = nullptr);

struct TrainTrace {
    std::vector<double> train_loss; // mean over the epoch's batches
    std::vector<double> valid_loss; // empty when there is no validation split
    std::uint32_t epochs_run = 0;
    bool early_stopped = false;
};

// Mini-batch SGD on cross-entropy over the train split of `docs`; early
// stopping on the valid split (patience 5) when one exists, returning the
// best-validation snapshot. Deterministic given config.seed.
LMParameters train_lm(const LMConfig& config, std::span<const Document> docs,
                      TrainTrace* trace = nullptr);

// exp(mean NLL per predicted token), natural log.
double perplexity(const LMParameters& params, std::span<const Document> docs);

std::string serialize_checkpoint(const LMParameters& params);
LMParameters deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const LMParameters& params);
LMParameters load_checkpoint(const std::filesystem::path& path);

// Numerically stable in-place softmax over logits.
void softmax_inplace(std::span<double> logits);

} // namespace sknn
