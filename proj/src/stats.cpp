#include "dynmal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>
#include <nlohmann/json.hpp>

#include "dynmal/error.hpp"

namespace dynmal::stats {

using nlohmann::json;

CorrectnessMatrix::CorrectnessMatrix(std::vector<std::string> models, std::vector<std::vector<bool>> columns)
    : names_(std::move(models)), columns_(std::move(columns)) {
    if (names_.size() != columns_.size()) throw DimensionError("model names and columns differ in count");
    if (columns_.size() < 2) throw ValidationError("significance testing needs at least two models");
    if (columns_.front().empty()) throw ValidationError("correctness matrix has no samples");
    for (const auto& c : columns_) {
        if (c.size() != columns_.front().size()) throw DimensionError("correctness vectors differ in length");
    }
}

double chi_square_sf(double x, double degrees_of_freedom) {
    if (!(degrees_of_freedom > 0.0)) throw ValidationError("chi-square needs positive degrees of freedom");
    if (x <= 0.0) return 1.0;
    return boost::math::gamma_q(degrees_of_freedom / 2.0, x / 2.0);
}

TestResult cochran_q(const CorrectnessMatrix& matrix) {
    const std::size_t k = matrix.models();
    if (k < 3) throw ValidationError("Cochran's Q needs at least three models");
    double sum_col_sq = 0.0, sum_row_sq = 0.0, total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        const auto& col = matrix.column(j);
        const double c = static_cast<double>(std::count(col.begin(), col.end(), true));
        sum_col_sq += c * c;
        total += c;
    }
    for (std::size_t i = 0; i < matrix.samples(); ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < k; ++j) r += matrix.at(i, j);
        sum_row_sq += r * r;
    }
    const double kd = static_cast<double>(k);
    const double denominator = kd * total - sum_row_sq;
    if (denominator <= 0.0) return {0.0, 1.0};
    const double q = (kd - 1.0) * (kd * sum_col_sq - total * total) / denominator;
    return {q, chi_square_sf(q, kd - 1.0)};
}

McNemarResult mcnemar(const std::vector<bool>& a, const std::vector<bool>& b) {
    if (a.size() != b.size()) throw DimensionError("McNemar inputs differ in length");
    McNemarResult r;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] && !b[i]) ++r.b;
        else if (!a[i] && b[i]) ++r.c;
    }
    const std::size_t n = r.b + r.c;
    if (n == 0) return r;
    const double diff = std::abs(static_cast<double>(r.b) - static_cast<double>(r.c));
    r.statistic = std::pow(std::max(0.0, diff - 1.0), 2) / static_cast<double>(n);
    if (n < kExactMcNemarBelow) {
        r.exact = true;
        // Two-sided exact binomial test at p = 1/2; n < 25 keeps every term exact.
        const std::size_t low = std::min(r.b, r.c);
        double coefficient = 1.0, tail = 0.0;
        for (std::size_t i = 0; i <= low; ++i) {
            tail += coefficient;
            coefficient = coefficient * static_cast<double>(n - i) / static_cast<double>(i + 1);
        }
        r.p_value = std::min(1.0, 2.0 * std::ldexp(tail, -static_cast<int>(n)));
    } else {
        r.p_value = chi_square_sf(r.statistic, 1.0);
    }
    return r;
}

double sidak_alpha(double alpha, std::size_t m) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
    if (m < 1) throw ValidationError("family size must be at least 1");
    return -std::expm1(std::log1p(-alpha) / static_cast<double>(m));
}

SignificanceMatrix pairwise_significance(const CorrectnessMatrix& matrix, double alpha) {
    SignificanceMatrix sig;
    const std::size_t k = matrix.models();
    sig.models = matrix.names();
    sig.alpha = alpha;
    sig.comparisons = k * (k - 1) / 2;
    sig.corrected_alpha = sidak_alpha(alpha, sig.comparisons);
    sig.pairs.assign(k, std::vector<std::optional<PairResult>>(k));
    if (k >= 3) {
        sig.omnibus = cochran_q(matrix);
        sig.gated = sig.omnibus->p_value >= alpha;
    }
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
            PairResult pr{mcnemar(matrix.column(i), matrix.column(j)), false};
            pr.significant = !sig.gated && pr.test.p_value < sig.corrected_alpha;
            sig.pairs[i][j] = pr;
            std::swap(pr.test.b, pr.test.c);
            sig.pairs[j][i] = pr;
        }
    }
    return sig;
}

std::string render_table(const SignificanceMatrix& sig) {
    std::size_t width = 4;
    for (const auto& m : sig.models) width = std::max(width, m.size());
    auto pad = [width](const std::string& s) { return s + std::string(width + 2 - s.size(), ' '); };
    std::ostringstream out;
    out << pad("");
    for (const auto& m : sig.models) out << pad(m);
    out << '\n';
    for (std::size_t i = 0; i < sig.models.size(); ++i) {
        out << pad(sig.models[i]);
        for (std::size_t j = 0; j < sig.models.size(); ++j) {
            out << pad(i == j ? "-" : (sig.pairs[i][j]->significant ? "YES" : "NO"));
        }
        out << '\n';
    }
    char line[160];
    std::snprintf(line, sizeof line, "alpha=%.4g, Sidak-corrected alpha=%.6g over m=%zu pairs\n", sig.alpha,
                  sig.corrected_alpha, sig.comparisons);
    out << line;
    if (sig.omnibus) {
        std::snprintf(line, sizeof line, "Cochran's Q=%.4f, p=%.4g%s\n", sig.omnibus->statistic,
                      sig.omnibus->p_value, sig.gated ? " (not rejected; pairs not significant)" : "");
        out << line;
    }
    return out.str();
}

json to_json(const SignificanceMatrix& sig) {
    json pairs = json::array();
    for (std::size_t i = 0; i < sig.models.size(); ++i) {
        for (std::size_t j = i + 1; j < sig.models.size(); ++j) {
            const auto& p = *sig.pairs[i][j];
            pairs.push_back({{"a", sig.models[i]},
                             {"b", sig.models[j]},
                             {"statistic", p.test.statistic},
                             {"p_value", p.test.p_value},
                             {"a_only_correct", p.test.b},
                             {"b_only_correct", p.test.c},
                             {"exact", p.test.exact},
                             {"significant", p.significant}});
        }
    }
    json matrix = json::array();
    for (std::size_t i = 0; i < sig.models.size(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < sig.models.size(); ++j) {
            row.push_back(i == j ? json(nullptr) : json(sig.pairs[i][j]->significant ? "YES" : "NO"));
        }
        matrix.push_back(std::move(row));
    }
    json j = {{"format_version", 1},
              {"kind", "significance"},
              {"models", sig.models},
              {"alpha", sig.alpha},
              {"corrected_alpha", sig.corrected_alpha},
              {"m", sig.comparisons},
              {"gated", sig.gated},
              {"pairs", pairs},
              {"matrix", matrix}};
    j["omnibus"] = sig.omnibus ? json{{"q", sig.omnibus->statistic}, {"p_value", sig.omnibus->p_value}} : json(nullptr);
    return j;
}

}  // namespace dynmal::stats
