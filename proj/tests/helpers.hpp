#pragma once

// Shared fixtures for the unit and acceptance suites.

#include "sknn/corpus.hpp"
#include "sknn/datastore.hpp"
#include "sknn/taxonomy.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace sknn::test {

inline StyleTaxonomy two_style_taxonomy() {
    return StyleTaxonomy::parse("category bright\n"
                                "category murky\n"
                                "style sunny bright\n"
                                "style gloomy murky\n"
                                "source forum\n"
                                "source wiki\n");
}

inline StyleTaxonomy four_style_taxonomy() {
    return StyleTaxonomy::parse("category bright\n"
                                "category murky\n"
                                "style sunny bright\n"
                                "style breezy bright\n"
                                "style gloomy murky\n"
                                "style stormy murky\n"
                                "source forum\n"
                                "source wiki\n");
}

inline StyleTaxonomy reference_taxonomy() {
    return StyleTaxonomy::parse(
        "category positive\ncategory negative\n"
        "style formal positive\nstyle informal negative\n"
        "style polite positive\nstyle impolite negative\n"
        "style supportive positive\nstyle offensive negative\n"
        "style toxic negative\nstyle wiki_neutral_text neutral\nstyle neutral neutral\n"
        "source gyafc\nsource ruddit\nsource politeness\nsource detox\n"
        "source civil_comments\n");
}

// Fresh directory under the system temp root, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<unsigned> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("sknn_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path file(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

// Writes a datastore file byte-by-byte per the documented layout, independent
// of Datastore::build. Doubles as a format check for the reader.
inline void write_raw_datastore(const std::filesystem::path& path, std::uint32_t dim,
                                const std::vector<std::vector<float>>& keys,
                                const std::vector<std::uint32_t>& values,
                                const std::vector<LocalityDescriptor>& locality,
                                DistanceKind distance, const Fingerprint& fp) {
    ByteWriter w;
    w.bytes("SKNN", 4);
    w.u32(1);
    w.u32(dim);
    w.u64(keys.size());
    w.u8(static_cast<std::uint8_t>(distance));
    w.bytes(fp.data(), fp.size());
    for (const auto& key : keys) {
        for (float v : key) w.f32(v);
    }
    for (std::uint32_t v : values) w.u32(v);
    for (const auto& loc : locality) {
        w.u16(loc.style_id);
        w.u16(loc.source_id);
        w.u16(loc.category_id);
    }
    atomic_write_file(path, w.data());
}

// Naive exact-kNN oracle: scalar sequential-order f64 distances, full sort.
struct OracleHit {
    std::uint64_t index;
    double distance;
};

inline std::vector<OracleHit> knn_oracle(const std::vector<std::vector<float>>& keys,
                                         const std::vector<float>& query, std::size_t k) {
    std::vector<OracleHit> hits;
    hits.reserve(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) {
            const double d = static_cast<double>(query[j]) - static_cast<double>(keys[i][j]);
            acc += d * d;
        }
        hits.push_back({i, acc});
    }
    std::sort(hits.begin(), hits.end(), [](const OracleHit& a, const OracleHit& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.index < b.index;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

// Upper-tail survival function of the chi-squared distribution, via the
// regularized incomplete gamma function (series + continued fraction).
inline double chi2_sf(double x, double dof) {
    const double a = dof / 2.0;
    const double half = x / 2.0;
    if (half <= 0.0) return 1.0;

    auto gamma_p_series = [](double aa, double xx) {
        double sum = 1.0 / aa;
        double term = sum;
        for (int n = 1; n < 500; ++n) {
            term *= xx / (aa + n);
            sum += term;
            if (std::fabs(term) < std::fabs(sum) * 1e-15) break;
        }
        return sum * std::exp(-xx + aa * std::log(xx) - std::lgamma(aa));
    };
    auto gamma_q_cf = [](double aa, double xx) {
        double b = xx + 1.0 - aa;
        double c = 1e300;
        double d = 1.0 / b;
        double h = d;
        for (int i = 1; i < 500; ++i) {
            const double an = -i * (i - aa);
            b += 2.0;
            d = an * d + b;
            if (std::fabs(d) < 1e-300) d = 1e-300;
            c = b + an / c;
            if (std::fabs(c) < 1e-300) c = 1e-300;
            d = 1.0 / d;
            const double delta = d * c;
            h *= delta;
            if (std::fabs(delta - 1.0) < 1e-15) break;
        }
        return h * std::exp(-xx + aa * std::log(xx) - std::lgamma(aa));
    };

    if (half < a + 1.0) return 1.0 - gamma_p_series(a, half);
    return gamma_q_cf(a, half);
}

// Relative error with an absolute floor, the usual gradient-check metric.
inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

} // namespace sknn::test
