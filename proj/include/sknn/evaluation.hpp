#pragma once

#include "sknn/common.hpp"
#include "sknn/corpus.hpp"
#include "sknn/datastore.hpp"
#include "sknn/knn_lm.hpp"
#include "sknn/lm.hpp"
#include "sknn/locality.hpp"
#include "sknn/taxonomy.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sknn {

// The seven feature subsets of the perplexity ablation, in report order:
// none, style, category, source, style+category, source+category, style+source.
std::vector<LocalityFeatureSet> default_ablation_rows();

// {0, 0.05, ..., 0.95, 1.0}
std::vector<double> default_lambda_grid();

// JSON report wrapper. Serialization is deterministic (sorted keys, shortest
// round-trip floats); non-finite perplexities are stored as the string "inf".
struct EvalReport {
    nlohmann::json doc;

    std::string to_text() const;
    static EvalReport from_text(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static EvalReport load(const std::filesystem::path& path);
};

nlohmann::json json_ppl(double value); // number when finite, "inf" otherwise

// ---------------------------------------------------------------------------
// Lambda search
// ---------------------------------------------------------------------------

struct LambdaSearchResult {
    double best_lambda = 0.0;
    std::vector<std::pair<double, double>> curve; // (lambda, perplexity), grid order
    std::size_t fallbacks = 0;
};

// Retrieval and p_LM are evaluated once per position and reused across the
// grid; the per-lambda numbers are bit-equal to running the model at that
// lambda. Ties break toward the smaller lambda.
LambdaSearchResult grid_search_lambda(const KnnLmModel& model, std::span<const Document> docs,
                                      std::span<const double> grid, unsigned threads = 0);

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationOptions {
    std::vector<LocalityFeatureSet> rows = default_ablation_rows();
    std::size_t k = 64;
    std::vector<double> lambda_grid = default_lambda_grid();
    std::size_t sample_size = 2000;
    std::uint64_t seed = 0;
    double locality_lr = 0.1;
    std::uint32_t locality_epochs = 50;
    std::optional<DistanceKind> metric; // default: the store's header flag
    unsigned threads = 0;
};

// Per row: train theta on a shared annotated sample (identity weights for the
// `none` row), pick lambda on the valid split, report test perplexity at that
// lambda. Also reports the bare LM test perplexity.
EvalReport run_ablation(const StyleTaxonomy& taxonomy, const CorpusBundle& bundle,
                        const LMParameters& params, const Datastore& store,
                        const IvfIndex* ivf, const AblationOptions& options);

// ---------------------------------------------------------------------------
// Style-control proxies
// ---------------------------------------------------------------------------

// Mean over steps of the fraction of retrieved neighbors whose style equals
// target_style. Steps that retrieved nothing contribute zero.
double style_match_score(std::span<const StepDiagnostics> steps, std::uint16_t target_style);

struct StyleSimilarityMatrix {
    std::vector<std::string> styles;
    std::vector<double> values; // styles x styles, row-major, scaled (1+cos)/2

    double at(std::size_t i, std::size_t j) const { return values[i * styles.size() + j]; }
    std::string to_csv() const;
};

// Mean context encoding per style, pairwise cosine, scaled to [0, 1]. Styles
// default to the whole taxonomy; any style without documents is an error
// naming that style.
StyleSimilarityMatrix style_similarity_heatmap(
    const LMParameters& params, std::span<const Document> docs, const StyleTaxonomy& taxonomy,
    const std::optional<std::vector<std::uint16_t>>& style_subset = std::nullopt);

// ---------------------------------------------------------------------------
// Side-by-side comparison
// ---------------------------------------------------------------------------

struct ComparePrompt {
    std::vector<std::uint32_t> tokens;
    std::uint16_t target_style = 0;
};

// Completion-style prompts: the first half of each sampled document.
std::vector<ComparePrompt> sample_prompts(std::span<const Document> docs, std::size_t n,
                                          std::uint64_t seed,
                                          std::optional<std::uint16_t> force_style = std::nullopt);

struct CompareSettings {
    std::size_t max_new_tokens = 24;
    bool greedy = true;
    double temperature = 1.0;
    std::size_t top_k_tokens = 0;
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

struct CompareReport {
    nlohmann::json rows = nlohmann::json::array(); // one object per prompt
    std::size_t prompts = 0;
    std::size_t style_wins_a = 0, style_wins_b = 0, style_ties = 0;
    std::size_t nll_wins_a = 0, nll_wins_b = 0, nll_ties = 0;
    double mean_style_delta = 0.0; // mean(style_a - style_b)
    double mean_nll_delta = 0.0;   // mean(nll_a - nll_b); negative favors A

    std::string to_jsonl() const;
    nlohmann::json summary() const;
};

// Generates continuations from both models for every prompt (same per-prompt
// seed), scores style via style_match_score and fluency via per-token NLL
// under fluency_ref. Models must share a vocabulary.
CompareReport compare_models(const KnnLmModel& a, const KnnLmModel& b,
                             const LMParameters& fluency_ref,
                             std::span<const ComparePrompt> prompts, const Vocabulary& vocab,
                             const StyleTaxonomy& taxonomy, const CompareSettings& settings);

} // namespace sknn
