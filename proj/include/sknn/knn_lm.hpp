#pragma once

#include "sknn/common.hpp"
#include "sknn/corpus.hpp"
#include "sknn/datastore.hpp"
#include "sknn/lm.hpp"
#include "sknn/locality.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace sknn {

enum class RetrievalMode : std::uint8_t { exact = 0, ivf = 1 };

struct KnnLmConfig {
    std::size_t k = 64;
    double lambda = 0.25;
    DistanceKind metric = DistanceKind::squared_l2;
    RetrievalMode mode = RetrievalMode::exact;
    std::uint32_t n_probe = 1;
    std::optional<std::uint16_t> style_restriction; // single-style-datastore baseline

    void validate() const;
};

// Everything frozen that the combined model needs. All members are borrowed;
// the caller keeps them alive. Construct through make_model so the taxonomy
// fingerprint is checked against the store once, up front.
struct KnnLmModel {
    const Datastore* store = nullptr;
    const IvfIndex* ivf = nullptr; // required when config.mode == ivf
    const LMParameters* params = nullptr;
    LocalityWeights weights = LocalityWeights::identity(LocalityFeatureSet::none());
    KnnLmConfig config;
    Fingerprint taxonomy_fp{};
    std::uint32_t n_styles = 0; // for per-step style diagnostics
};

KnnLmModel make_model(const Datastore& store, const LMParameters& params,
                      const LocalityWeights& weights, const KnnLmConfig& config,
                      const StyleTaxonomy& taxonomy, const IvfIndex* ivf = nullptr);

struct StepStats {
    std::size_t steps = 0;
    std::size_t fallbacks = 0; // empty effective neighbor set -> pure p_LM
};

// lambda * p_kNN(target) + (1 - lambda) * p_LM(target); kept in one place so
// every scoring path mixes with identical floating-point behavior.
inline double interpolate(double lambda, double p_knn, double p_lm) {
    return lambda * p_knn + (1.0 - lambda) * p_lm;
}

// The section-4 mixture. lambda = 0 skips retrieval and returns p_LM
// unchanged; an empty effective neighbor set falls back to p_LM and is
// counted in stats.
std::vector<double> combined_distribution(const KnnLmModel& model,
                                          std::span<const std::uint32_t> context,
                                          const LocalityDescriptor& query_loc,
                                          StepStats* stats = nullptr,
                                          std::vector<Neighbor>* neighbors_out = nullptr);

struct NllResult {
    double total_nll = 0.0;
    std::size_t tokens = 0;
    std::size_t fallbacks = 0;
};

NllResult sequence_nll(const KnnLmModel& model, const Document& doc,
                       const LocalityDescriptor& query_loc);

// Mean per-token perplexity over documents, each scored under its own
// locality. Documents may be sharded across threads; the reduction is done
// in document order so the result is deterministic.
struct CorpusNll {
    double total_nll = 0.0;
    std::size_t tokens = 0;
    std::size_t fallbacks = 0;

    double perplexity() const;
};

CorpusNll corpus_nll(const KnnLmModel& model, std::span<const Document> docs,
                     unsigned threads = 0);

struct GenerationRequest {
    std::vector<std::uint32_t> prompt;
    LocalityDescriptor target_locality;
    std::size_t max_new_tokens = 32;
    bool greedy = true;
    double temperature = 1.0;   // sampling only
    std::size_t top_k_tokens = 0; // 0 = unrestricted; sampling only
    std::uint64_t seed = 0;
};

struct StepDiagnostics {
    std::uint32_t token = 0;
    double same_style_fraction = 0.0;    // of retrieved neighbors, vs target style
    bool token_in_neighbors = false;     // emitted token carried by some neighbor
    bool fallback = false;               // step used pure p_LM
    std::vector<std::uint32_t> style_counts; // retrieved neighbors per style id
};

struct GenerationResult {
    std::vector<std::uint32_t> tokens; // new tokens only, EOS included if hit
    std::vector<StepDiagnostics> steps;
};

// Autoregressive decoding under combined_distribution with the request's
// target locality as the query locality. Greedy is deterministic; sampling is
// deterministic given request.seed.
GenerationResult generate(const KnnLmModel& model, const GenerationRequest& request);

} // namespace sknn
