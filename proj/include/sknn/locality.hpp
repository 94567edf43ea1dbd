#pragma once

#include "sknn/common.hpp"
#include "sknn/corpus.hpp"
#include "sknn/datastore.hpp"
#include "sknn/lm.hpp"
#include "sknn/taxonomy.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sknn {

enum class Feature : std::uint8_t { style = 0, source = 1, category = 2 };

// Ordered subset of (style, source, category). The empty set is the plain
// kNN-LM baseline: one combination, no locality information.
class LocalityFeatureSet {
  public:
    static LocalityFeatureSet none() { return LocalityFeatureSet(0); }
    static LocalityFeatureSet of(bool style, bool source, bool category);
    static LocalityFeatureSet parse(std::string_view text); // "style,source" | "none"

    std::string to_string() const;

    bool has(Feature f) const { return (mask_ & (1u << static_cast<unsigned>(f))) != 0; }
    bool empty() const { return mask_ == 0; }
    unsigned level_count() const; // L
    std::size_t combination_count() const { return std::size_t{1} << level_count(); }

    bool operator==(const LocalityFeatureSet&) const = default;

  private:
    explicit LocalityFeatureSet(unsigned mask) : mask_(mask) {}
    unsigned mask_ = 0;
};

// One bit per active feature, set when the query and neighbor agree on it.
// Active features take bits in (style, source, category) order with the first
// active feature as the least significant bit; all-match is 2^L - 1.
std::size_t combination_index(const LocalityDescriptor& query,
                              const LocalityDescriptor& neighbor,
                              LocalityFeatureSet features);

// Learned distance scales, one per locality combination. Linear with a
// structurally absent bias: g_n(d) = theta[n] * d. All-ones is the identity.
// mask_style_mismatch realizes the single-style-datastore baseline: neighbors
// whose style differs from the query get probability zero (and retrieval is
// restricted to the query style), rather than any finite reweighting.
struct LocalityWeights {
    LocalityFeatureSet features = LocalityFeatureSet::none();
    std::vector<double> theta; // combination_count() entries
    bool mask_style_mismatch = false;

    static LocalityWeights identity(LocalityFeatureSet features);
    void validate() const;
};

double reweighted_distance(double raw_distance, std::size_t combo,
                           const LocalityWeights& weights);

// softmax over negative reweighted distances, aggregated across duplicate
// target tokens and normalized over the retrieved set. Probability is zero
// for tokens no neighbor carries. Neighbor distances are squared L2 as
// returned by retrieval; `metric` selects what the softmax consumes.
// Throws DataError when no neighbor survives masking (callers fall back to
// the base LM).
std::vector<double> knn_locality_distribution(std::span<const Neighbor> neighbors,
                                              const LocalityDescriptor& query_loc,
                                              const LocalityWeights& weights,
                                              std::uint32_t vocab_size,
                                              DistanceKind metric = DistanceKind::squared_l2);

LocalityWeights force_style_restriction(const LocalityWeights& weights_template);

// ---------------------------------------------------------------------------
// Weight training
// ---------------------------------------------------------------------------

struct AnnotatedSample {
    struct Item {
        std::vector<std::uint32_t> context; // token prefix, not yet windowed
        std::uint32_t target = 0;
        LocalityDescriptor locality;
    };
    std::vector<Item> items;
};

// sample_size positions drawn without replacement from the train split.
AnnotatedSample draw_annotated_sample(std::span<const Document> docs, std::size_t sample_size,
                                      std::uint64_t seed);

// Retrieval snapshot for one sample: theta never changes which neighbors are
// retrieved, so distances and combination indices are cached once and every
// training epoch is retrieval-free.
struct CachedSample {
    struct CachedNeighbor {
        double distance = 0.0; // already in the training metric
        std::uint32_t combo = 0;
        std::uint32_t value = 0;
    };
    std::vector<CachedNeighbor> neighbors;
    std::uint32_t target = 0;
    bool target_retrievable = false; // some neighbor carries the target
};

CachedSample cache_sample(const Datastore& store, const LMParameters& params,
                          const AnnotatedSample::Item& item, LocalityFeatureSet features,
                          std::size_t k, DistanceKind metric);

// Mean NLL of the targets under the cached-neighbor kNN distribution and its
// gradient w.r.t. theta. Samples whose neighbors never carry the target are
// skipped (their gradient is undefined); counts are reported by the trainer.
double locality_loss_and_grad(std::span<const CachedSample> samples,
                              const LocalityWeights& weights, std::span<double> grad);

struct LocalityTrainOptions {
    std::size_t k = 64;
    double learning_rate = 0.1;
    std::uint32_t epochs = 50;
    std::uint64_t seed = 0;
    DistanceKind metric = DistanceKind::squared_l2;
    unsigned threads = 0; // 0 = default_threads()
};

struct LocalityTrainResult {
    LocalityWeights weights;
    std::vector<double> loss_trace; // loss at the start of each epoch
    std::size_t used_samples = 0;
    std::size_t skipped_samples = 0; // target absent from all k neighbors
};

// Full-batch projected gradient descent (theta clamped at zero) starting from
// all-ones weights. Deterministic given the sample and options.
LocalityTrainResult train_locality_weights(const Datastore& store, const LMParameters& params,
                                           const AnnotatedSample& sample,
                                           LocalityFeatureSet features,
                                           const LocalityTrainOptions& options);

// Plain-text weights file:
//   feature_set: style,source
//   mask: none|style
//   a_<bitpattern> = <value>     (one line per combination, index order)
std::string serialize_weights(const LocalityWeights& weights);
LocalityWeights parse_weights(std::string_view text);
void save_weights(const std::filesystem::path& path, const LocalityWeights& weights);
LocalityWeights load_weights(const std::filesystem::path& path);

} // namespace sknn
