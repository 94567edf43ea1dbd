#include "sknn/knn_lm.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sknn {

void KnnLmConfig::validate() const {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
    if (mode == RetrievalMode::ivf && n_probe < 1) throw ConfigError("n_probe must be >= 1");
}

KnnLmModel make_model(const Datastore& store, const LMParameters& params,
                      const LocalityWeights& weights, const KnnLmConfig& config,
                      const StyleTaxonomy& taxonomy, const IvfIndex* ivf) {
    config.validate();
    weights.validate();
    if (store.dim() != params.config.hidden_dim) {
        throw ConfigError("datastore key dimension does not match the model encoder");
    }
    const Fingerprint fp = taxonomy.fingerprint();
    if (fp != store.header().taxonomy_fp) {
        throw ConfigError("taxonomy fingerprint mismatch: the datastore was built against a "
                          "different taxonomy");
    }
    if (config.mode == RetrievalMode::ivf) {
        if (ivf == nullptr) throw ConfigError("ivf retrieval requested without an index");
        if (config.n_probe > ivf->n_clusters()) {
            throw ConfigError("n_probe exceeds the index cluster count");
        }
    }
    if (config.style_restriction && *config.style_restriction >= taxonomy.style_count()) {
        throw ConfigError("style restriction id out of range");
    }

    KnnLmModel model;
    model.store = &store;
    model.ivf = ivf;
    model.params = &params;
    model.weights = weights;
    model.config = config;
    model.taxonomy_fp = fp;
    model.n_styles = static_cast<std::uint32_t>(taxonomy.style_count());
    return model;
}

namespace {

std::vector<Neighbor> retrieve(const KnnLmModel& model, std::span<const float> query,
                               const LocalityDescriptor& query_loc) {
    // Style masking restricts retrieval itself; that is what makes the masked
    // mixed store equivalent to a physically separate single-style store.
    std::optional<std::uint16_t> style = model.config.style_restriction;
    if (!style && model.weights.mask_style_mismatch) style = query_loc.style_id;

    if (model.config.mode == RetrievalMode::ivf) {
        return knn_approx(*model.store, *model.ivf, query, model.config.k,
                          model.config.n_probe, style);
    }
    return knn_exact(*model.store, query, model.config.k, style);
}

} // namespace

std::vector<double> combined_distribution(const KnnLmModel& model,
                                          std::span<const std::uint32_t> context,
                                          const LocalityDescriptor& query_loc,
                                          StepStats* stats, std::vector<Neighbor>* neighbors_out) {
    if (model.taxonomy_fp != model.store->header().taxonomy_fp) {
        throw ConfigError("taxonomy fingerprint mismatch between store and query");
    }
    if (stats != nullptr) ++stats->steps;
    if (neighbors_out != nullptr) neighbors_out->clear();

    std::vector<double> p_lm = lm_distribution(*model.params, context);
    if (model.config.lambda == 0.0) return p_lm;

    const auto query = to_f32(encode(*model.params, context));
    auto neighbors = retrieve(model, query, query_loc);
    if (neighbors_out != nullptr) *neighbors_out = neighbors;

    if (neighbors.empty()) {
        if (stats != nullptr) ++stats->fallbacks;
        return p_lm;
    }

    const auto p_knn =
        knn_locality_distribution(neighbors, query_loc, model.weights,
                                  model.params->config.vocab_size, model.config.metric);
    const double lambda = model.config.lambda;
    std::vector<double> mix(p_lm.size());
    for (std::size_t i = 0; i < mix.size(); ++i) {
        mix[i] = interpolate(lambda, p_knn[i], p_lm[i]);
    }
    return mix;
}

NllResult sequence_nll(const KnnLmModel& model, const Document& doc,
                       const LocalityDescriptor& query_loc) {
    if (doc.tokens.empty()) throw DataError("sequence_nll: empty document");
    NllResult result;
    StepStats stats;
    for (std::size_t pos = 0; pos < doc.tokens.size(); ++pos) {
        const auto p = combined_distribution(
            model, std::span(doc.tokens.data(), pos), query_loc, &stats);
        result.total_nll += -std::log(p[doc.tokens[pos]]);
        ++result.tokens;
    }
    result.fallbacks = stats.fallbacks;
    return result;
}

double CorpusNll::perplexity() const {
    if (tokens == 0) throw DataError("perplexity over zero tokens");
    return std::exp(total_nll / static_cast<double>(tokens));
}

CorpusNll corpus_nll(const KnnLmModel& model, std::span<const Document> docs,
                     unsigned threads) {
    std::vector<NllResult> per_doc(docs.size());
    parallel_for(docs.size(), threads, [&](std::size_t i) {
        per_doc[i] = sequence_nll(model, docs[i], docs[i].locality);
    });
    CorpusNll total;
    for (const auto& r : per_doc) { // summed in document order
        total.total_nll += r.total_nll;
        total.tokens += r.tokens;
        total.fallbacks += r.fallbacks;
    }
    return total;
}

namespace {

std::uint32_t pick_greedy(std::span<const double> p) {
    std::uint32_t best = 0;
    for (std::uint32_t i = 1; i < p.size(); ++i) {
        if (p[i] > p[best]) best = i; // ties keep the lowest id
    }
    return best;
}

std::uint32_t pick_sample(std::span<const double> p, double temperature,
                          std::size_t top_k_tokens, std::mt19937_64& rng) {
    std::vector<std::uint32_t> candidates(p.size());
    for (std::uint32_t i = 0; i < p.size(); ++i) candidates[i] = i;
    if (top_k_tokens > 0 && top_k_tokens < candidates.size()) {
        std::partial_sort(candidates.begin(), candidates.begin() + top_k_tokens,
                          candidates.end(), [&p](std::uint32_t a, std::uint32_t b) {
                              if (p[a] != p[b]) return p[a] > p[b];
                              return a < b;
                          });
        candidates.resize(top_k_tokens);
    }

    std::vector<double> weights(candidates.size());
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        weights[i] = std::pow(p[candidates[i]], 1.0 / temperature);
        total += weights[i];
    }
    if (!(total > 0.0)) return pick_greedy(p);

    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double r = uni(rng) * total;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        r -= weights[i];
        if (r <= 0.0) return candidates[i];
    }
    return candidates.back();
}

} // namespace

GenerationResult generate(const KnnLmModel& model, const GenerationRequest& request) {
    if (request.max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    if (!request.greedy && !(request.temperature > 0.0)) {
        throw ConfigError("sampling temperature must be positive");
    }

    std::mt19937_64 rng(request.seed);
    std::vector<std::uint32_t> context = request.prompt;
    std::vector<Neighbor> neighbors;

    GenerationResult result;
    for (std::size_t step = 0; step < request.max_new_tokens; ++step) {
        StepStats stats;
        const auto p = combined_distribution(model, context, request.target_locality, &stats,
                                             &neighbors);

        StepDiagnostics diag;
        diag.fallback = stats.fallbacks > 0 || neighbors.empty();
        diag.style_counts.assign(model.n_styles, 0);
        std::size_t same_style = 0;
        for (const auto& n : neighbors) {
            if (n.locality.style_id < model.n_styles) ++diag.style_counts[n.locality.style_id];
            if (n.locality.style_id == request.target_locality.style_id) ++same_style;
        }
        diag.same_style_fraction =
            neighbors.empty() ? 0.0
                              : static_cast<double>(same_style) /
                                    static_cast<double>(neighbors.size());

        const std::uint32_t token =
            request.greedy ? pick_greedy(p)
                           : pick_sample(p, request.temperature, request.top_k_tokens, rng);
        diag.token = token;
        diag.token_in_neighbors =
            std::any_of(neighbors.begin(), neighbors.end(),
                        [token](const Neighbor& n) { return n.value == token; });

        result.tokens.push_back(token);
        result.steps.push_back(std::move(diag));
        context.push_back(token);
        if (token == Vocabulary::kEos) break;
    }
    return result;
}

} // namespace sknn
