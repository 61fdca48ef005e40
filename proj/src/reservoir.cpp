#include "dynmal/reservoir.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dynmal/parallel.hpp"
#include "dynmal/random.hpp"

namespace dynmal::reservoir {

using nlohmann::json;

namespace {

// Perron root of |W| via power iteration on |W| + I (the shift keeps the
// iteration from oscillating on periodic graphs).
double abs_spectral_radius(const std::vector<std::vector<Synapse>>& recurrent, std::size_t n) {
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n))), next(n);
    double lambda = 0.0;
    for (int iter = 0; iter < 1000; ++iter) {
        std::copy(v.begin(), v.end(), next.begin());
        for (std::size_t src = 0; src < n; ++src) {
            for (const auto& s : recurrent[src]) next[s.target] += std::abs(s.weight) * v[src];
        }
        double norm = 0.0;
        for (double x : next) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += v[i] * next[i];
        for (std::size_t i = 0; i < n; ++i) v[i] = next[i] / norm;
        if (iter > 10 && std::abs(dot - lambda) < 1e-12 * std::max(1.0, dot)) {
            lambda = dot;
            break;
        }
        lambda = dot;
    }
    return std::max(0.0, lambda - 1.0);
}

}  // namespace

LiquidTopology build_liquid(const LiquidConfig& config, std::size_t channels, std::uint64_t seed) {
    const std::size_t n = config.neuron_count;
    if (n == 0) throw ValidationError("liquid needs at least one neuron");
    if (channels == 0) throw ValidationError("liquid needs at least one input channel");
    if (!(config.input_fraction > 0.0 && config.input_fraction <= 1.0)) {
        throw ValidationError("input fraction must lie in (0, 1]");
    }
    if (!(config.input_weight_min >= 0.0 && config.input_weight_max >= config.input_weight_min)) {
        throw ValidationError("input weight range must satisfy 0 <= min <= max");
    }
    if (config.recurrent && n < 2) {
        throw ValidationError("recurrent liquid needs at least two neurons (no self-connections)");
    }
    if (!(config.recurrent_density >= 0.0 && config.recurrent_density <= 1.0) ||
        !(config.excitatory_fraction >= 0.0 && config.excitatory_fraction <= 1.0) ||
        !(config.spectral_radius > 0.0)) {
        throw ValidationError("recurrent density, excitatory fraction or spectral radius out of range");
    }

    LiquidTopology topo;
    topo.neuron_count = n;
    topo.seed = seed;

    Rng rng = make_rng(seed, 0x11D);
    const auto fan_out = static_cast<std::size_t>(std::floor(config.input_fraction * static_cast<double>(n) + 1e-9));
    std::vector<std::uint32_t> pool(n);
    topo.input_map.resize(channels);
    for (auto& synapses : topo.input_map) {
        std::iota(pool.begin(), pool.end(), 0u);
        for (std::size_t k = 0; k < fan_out; ++k) {
            std::swap(pool[k], pool[k + uniform_index(rng, n - k)]);
            const double w = config.input_weight_min +
                             (config.input_weight_max - config.input_weight_min) * uniform01(rng);
            synapses.push_back({pool[k], w});
        }
        std::sort(synapses.begin(), synapses.end(),
                  [](const Synapse& a, const Synapse& b) { return a.target < b.target; });
    }

    topo.excitatory.resize(n);
    for (std::size_t i = 0; i < n; ++i) topo.excitatory[i] = uniform01(rng) < config.excitatory_fraction;
    topo.recurrent.resize(n);
    if (config.recurrent) {
        for (std::size_t src = 0; src < n; ++src) {
            const double sign = topo.excitatory[src] ? 1.0 : -1.0;
            for (std::size_t dst = 0; dst < n; ++dst) {
                if (dst == src) continue;
                if (uniform01(rng) < config.recurrent_density) {
                    topo.recurrent[src].push_back({static_cast<std::uint32_t>(dst), sign * (0.5 + 0.5 * uniform01(rng))});
                }
            }
        }
        const double rho = abs_spectral_radius(topo.recurrent, n);
        if (rho > 0.0) {
            const double factor = config.spectral_radius / rho;
            for (auto& synapses : topo.recurrent) {
                for (auto& s : synapses) s.weight *= factor;
            }
        }
    }
    return topo;
}

void validate(const LifParams& lif) {
    if (!(lif.membrane_time_constant > 0.0) || !(lif.threshold > 0.0) || !(lif.simulation_step > 0.0) ||
        lif.refractory_period == 0) {
        throw ValidationError("LIF parameters must be strictly positive");
    }
    if (!(lif.reset_potential < lif.threshold)) throw ValidationError("reset potential must lie below threshold");
}

LiquidStateVector run_liquid(const LiquidTopology& topology, const LifParams& lif, const MultiHotMatrix& input,
                             const StateWindows& windows, const StepObserver& observer) {
    validate(lif);
    if (input.width != topology.channels()) {
        throw DimensionError("input has " + std::to_string(input.width) + " channels, liquid expects " +
                             std::to_string(topology.channels()));
    }
    if (windows.windows == 0 || windows.window_steps == 0) throw ValidationError("state windows must be non-empty");

    const std::size_t n = topology.neuron_count;
    const double decay = std::exp(-lif.simulation_step / lif.membrane_time_constant);
    std::vector<double> v(n, lif.reset_potential), current(n), recurrent_in(n, 0.0), recurrent_next(n);
    std::vector<std::size_t> refractory(n, 0);
    std::vector<std::uint8_t> spiked(n);
    LiquidStateVector state;
    state.features.assign(windows.windows * n, 0.0);

    std::size_t row = 0;
    const std::size_t horizon = windows.horizon();
    for (std::size_t step = 0; step < horizon; ++step) {
        std::fill(current.begin(), current.end(), 0.0);
        while (row < input.rows() && input.time_steps[row] < static_cast<std::int64_t>(step)) ++row;
        if (row < input.rows() && input.time_steps[row] == static_cast<std::int64_t>(step)) {
            const auto counts = input.row(row);
            for (std::size_t ch = 0; ch < counts.size(); ++ch) {
                if (counts[ch] == 0) continue;
                for (const auto& s : topology.input_map[ch]) current[s.target] += s.weight * counts[ch];
            }
        }

        std::fill(recurrent_next.begin(), recurrent_next.end(), 0.0);
        double* window = state.features.data() + (step / windows.window_steps) * n;
        for (std::size_t i = 0; i < n; ++i) {
            spiked[i] = 0;
            if (refractory[i] > 0) {
                --refractory[i];
                v[i] = lif.reset_potential;
                continue;
            }
            v[i] = v[i] * decay + current[i] + recurrent_in[i];
            if (v[i] >= lif.threshold) {
                spiked[i] = 1;
                v[i] = lif.reset_potential;
                refractory[i] = lif.refractory_period;
                window[i] += 1.0;
                for (const auto& s : topology.recurrent[i]) recurrent_next[s.target] += s.weight;
            }
        }
        std::swap(recurrent_in, recurrent_next);
        if (observer) observer(step, v, spiked);
    }
    return state;
}

FeatureMatrix liquid_states(const LiquidTopology& topology, const LifParams& lif,
                            std::span<const MultiHotMatrix> inputs, const StateWindows& windows) {
    FeatureMatrix out(inputs.size(), windows.windows * topology.neuron_count);
    parallel_for(inputs.size(), [&](std::size_t i) {
        const auto s = run_liquid(topology, lif, inputs[i], windows);
        std::copy(s.features.begin(), s.features.end(), out.row(i).begin());
    });
    return out;
}

// ---- SVM ----

namespace {

double rbf(std::span<const double> a, std::span<const double> b, double sigma) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        d2 += d * d;
    }
    return std::exp(-d2 / (2.0 * sigma * sigma));
}

void standardization(const FeatureMatrix& x, std::vector<double>& mean, std::vector<double>& scale) {
    const std::size_t n = x.rows(), d = x.cols();
    mean.assign(d, 0.0);
    scale.assign(d, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j);
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
        const double sd = std::sqrt(var / static_cast<double>(n));
        scale[j] = sd > 0.0 ? sd : 1.0;
    }
}

}  // namespace

SvmModel::SvmModel(std::vector<double> mean, std::vector<double> scale, FeatureMatrix support,
                   std::vector<double> coefficients, double bias, double sigma, double box)
    : mean_(std::move(mean)),
      scale_(std::move(scale)),
      support_(std::move(support)),
      coef_(std::move(coefficients)),
      bias_(bias),
      sigma_(sigma),
      box_(box) {
    if (!(sigma_ > 0.0) || !(box_ > 0.0)) throw ValidationError("RBF readout needs sigma > 0 and box > 0");
    if (coef_.size() != support_.rows()) throw DimensionError("support vector and coefficient counts differ");
    if (mean_.size() != scale_.size()) throw DimensionError("standardization vectors differ in length");
}

double SvmModel::decision(std::span<const double> sample) const {
    if (sample.size() != mean_.size()) throw DimensionError("readout input width mismatch");
    std::vector<double> z(sample.size());
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = (sample[j] - mean_[j]) / scale_[j];
    double f = -bias_;
    for (std::size_t i = 0; i < support_.rows(); ++i) f += coef_[i] * rbf(support_.row(i), z, sigma_);
    return f;
}

Prediction SvmModel::predict(std::span<const double> sample) const {
    const double f = decision(sample);
    return Prediction::from_score(f >= 0.0 ? 1.0 / (1.0 + std::exp(-f)) : std::exp(f) / (1.0 + std::exp(f)));
}

SvmModel train_svm(const FeatureMatrix& samples, std::span<const Label> labels, double sigma, double box,
                   double tolerance) {
    const std::size_t n = samples.rows();
    if (n == 0 || n != labels.size()) throw DimensionError("SVM needs matching, non-empty samples and labels");
    if (!(sigma > 0.0) || !(box > 0.0)) throw ValidationError("RBF readout needs sigma > 0 and box > 0");

    std::vector<double> mean, scale;
    standardization(samples, mean, scale);
    FeatureMatrix z(n, samples.cols());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < samples.cols(); ++j) z(i, j) = (samples(i, j) - mean[j]) / scale[j];
    }
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = labels[i] == Label::malware ? 1.0 : -1.0;

    std::vector<double> q(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double k = y[i] * y[j] * rbf(z.row(i), z.row(j), sigma);
            q[i * n + j] = q[j * n + i] = k;
        }
    }
    std::vector<double> alpha(n, 0.0), grad(n, -1.0);
    constexpr double kTau = 1e-12;
    const std::size_t max_iter = std::max<std::size_t>(100000, 100 * n);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        // Maximal violating pair.
        double gmax = -std::numeric_limits<double>::infinity(), gmax2 = gmax;
        std::ptrdiff_t i = -1, j = -1;
        for (std::size_t t = 0; t < n; ++t) {
            if (y[t] > 0 ? alpha[t] < box : alpha[t] > 0.0) {
                const double v = -y[t] * grad[t];
                if (v >= gmax) gmax = v, i = static_cast<std::ptrdiff_t>(t);
            }
            if (y[t] > 0 ? alpha[t] > 0.0 : alpha[t] < box) {
                const double v = y[t] * grad[t];
                if (v >= gmax2) gmax2 = v, j = static_cast<std::ptrdiff_t>(t);
            }
        }
        if (i < 0 || j < 0 || gmax + gmax2 < tolerance) break;
        const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(j);
        const double old_a = alpha[a], old_b = alpha[b];
        const double qab = q[a * n + b];
        if (y[a] != y[b]) {
            double quad = q[a * n + a] + q[b * n + b] + 2.0 * qab;
            if (quad <= 0.0) quad = kTau;
            const double delta = (-grad[a] - grad[b]) / quad;
            const double diff = alpha[a] - alpha[b];
            alpha[a] += delta;
            alpha[b] += delta;
            if (diff > 0.0) {
                if (alpha[b] < 0.0) alpha[b] = 0.0, alpha[a] = diff;
            } else if (alpha[a] < 0.0) {
                alpha[a] = 0.0, alpha[b] = -diff;
            }
            if (diff > 0.0) {
                if (alpha[a] > box) alpha[a] = box, alpha[b] = box - diff;
            } else if (alpha[b] > box) {
                alpha[b] = box, alpha[a] = box + diff;
            }
        } else {
            double quad = q[a * n + a] + q[b * n + b] - 2.0 * qab;
            if (quad <= 0.0) quad = kTau;
            const double delta = (grad[a] - grad[b]) / quad;
            const double sum = alpha[a] + alpha[b];
            alpha[a] -= delta;
            alpha[b] += delta;
            if (sum > box) {
                if (alpha[a] > box) alpha[a] = box, alpha[b] = sum - box;
                if (alpha[b] > box) alpha[b] = box, alpha[a] = sum - box;
            } else {
                if (alpha[b] < 0.0) alpha[b] = 0.0, alpha[a] = sum;
                if (alpha[a] < 0.0) alpha[a] = 0.0, alpha[b] = sum;
            }
        }
        const double da = alpha[a] - old_a, db = alpha[b] - old_b;
        for (std::size_t t = 0; t < n; ++t) grad[t] += q[a * n + t] * da + q[b * n + t] * db;
    }

    double upper = std::numeric_limits<double>::infinity(), lower = -upper, free_sum = 0.0;
    std::size_t free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = y[t] * grad[t];
        if (alpha[t] >= box) {
            if (y[t] < 0) upper = std::min(upper, yg);
            else lower = std::max(lower, yg);
        } else if (alpha[t] <= 0.0) {
            if (y[t] > 0) upper = std::min(upper, yg);
            else lower = std::max(lower, yg);
        } else {
            ++free;
            free_sum += yg;
        }
    }
    const double rho = free > 0 ? free_sum / static_cast<double>(free) : (upper + lower) / 2.0;

    FeatureMatrix support;
    std::vector<double> coef;
    for (std::size_t t = 0; t < n; ++t) {
        if (alpha[t] > 0.0) {
            support.append_row(z.row(t));
            coef.push_back(alpha[t] * y[t]);
        }
    }
    if (support.rows() == 0) support = FeatureMatrix(0, samples.cols());
    return SvmModel(std::move(mean), std::move(scale), std::move(support), std::move(coef),
                    std::isfinite(rho) ? rho : 0.0, sigma, box);
}

// ---- readout ----

ReadoutSearch ReadoutSearch::linear_default() {
    ReadoutSearch s;
    s.kind = ReadoutKind::linear;
    for (double l2 : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) s.grid.push_back({l2, 0.0});
    return s;
}

ReadoutSearch ReadoutSearch::rbf_default() {
    ReadoutSearch s;
    s.kind = ReadoutKind::rbf_svm;
    for (double sigma : {1.0, 3.0, 10.0, 30.0, 100.0}) {
        for (double box : {0.1, 1.0, 10.0, 100.0, 1000.0}) s.grid.push_back({sigma, box});
    }
    return s;
}

ReadoutModel::ReadoutModel(forest::LinearModel linear, std::vector<SearchEntry> log, GridPoint selected)
    : kind_(ReadoutKind::linear), linear_(std::move(linear)), log_(std::move(log)), selected_(selected) {}

ReadoutModel::ReadoutModel(SvmModel svm, std::vector<SearchEntry> log, GridPoint selected)
    : kind_(ReadoutKind::rbf_svm), svm_(std::move(svm)), log_(std::move(log)), selected_(selected) {}

Prediction ReadoutModel::predict(std::span<const double> state) const {
    return kind_ == ReadoutKind::linear ? linear_.predict(state) : svm_.predict(state);
}

namespace {

constexpr std::size_t kReadoutEpochs = 200;

ReadoutModel fit_point(const FeatureMatrix& x, std::span<const Label> y, ReadoutKind kind, const GridPoint& p,
                       std::uint64_t seed) {
    if (kind == ReadoutKind::linear) {
        forest::LinearParams params;
        params.l2 = p.first;
        params.epochs = kReadoutEpochs;
        params.seed = seed;
        return ReadoutModel(forest::train_linear(x, y, params));
    }
    return ReadoutModel(train_svm(x, y, p.first, p.second));
}

FeatureMatrix select_rows(const FeatureMatrix& x, std::span<const std::size_t> rows) {
    FeatureMatrix out(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
    }
    return out;
}

}  // namespace

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const Label> labels, std::size_t folds,
                                                       std::uint64_t seed) {
    if (folds < 2) throw ValidationError("cross-validation needs at least two folds");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<int>(labels[i])].push_back(i);
    for (const auto& members : by_class) {
        if (members.empty()) throw ValidationError("readout training needs samples of both classes");
        if (members.size() < folds) {
            throw ValidationError("each class needs at least " + std::to_string(folds) + " samples for " +
                                  std::to_string(folds) + "-fold cross-validation");
        }
    }
    Rng rng = make_rng(seed, 0xCF);
    std::vector<std::vector<std::size_t>> out(folds);
    std::size_t offset = 0;
    for (auto& members : by_class) {
        for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[uniform_index(rng, i)]);
        for (std::size_t k = 0; k < members.size(); ++k) out[(offset + k) % folds].push_back(members[k]);
        offset += members.size();
    }
    for (auto& f : out) std::sort(f.begin(), f.end());
    return out;
}

double cross_validation_loss(const FeatureMatrix& states, std::span<const Label> labels, ReadoutKind kind,
                             const GridPoint& point, std::size_t folds, std::uint64_t seed) {
    if (states.rows() != labels.size()) throw DimensionError("state and label counts differ");
    const auto parts = stratified_folds(labels, folds, seed);
    std::vector<double> losses(folds);
    parallel_for(folds, [&](std::size_t f) {
        std::vector<bool> in_test(labels.size(), false);
        for (auto i : parts[f]) in_test[i] = true;
        std::vector<std::size_t> train;
        std::vector<Label> train_labels;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (!in_test[i]) {
                train.push_back(i);
                train_labels.push_back(labels[i]);
            }
        }
        const auto model = fit_point(select_rows(states, train), train_labels, kind, point, seed);
        std::size_t wrong = 0;
        for (auto i : parts[f]) wrong += model.predict(states.row(i)).label != labels[i];
        losses[f] = static_cast<double>(wrong) / static_cast<double>(parts[f].size());
    });
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(folds);
}

ReadoutModel train_readout(const FeatureMatrix& states, std::span<const Label> labels, const ReadoutSearch& search,
                           std::size_t folds, std::uint64_t seed) {
    if (search.grid.empty()) throw ValidationError("readout search grid is empty");
    if (states.rows() != labels.size()) throw DimensionError("state and label counts differ");
    stratified_folds(labels, folds, seed);  // validates class balance up front

    std::vector<SearchEntry> log;
    std::size_t best = 0;
    for (std::size_t g = 0; g < search.grid.size(); ++g) {
        const double loss = cross_validation_loss(states, labels, search.kind, search.grid[g], folds, seed);
        log.push_back({search.grid[g], loss});
        if (loss < log[best].cv_loss) best = g;
    }
    auto model = fit_point(states, labels, search.kind, search.grid[best], seed);
    if (search.kind == ReadoutKind::linear) return ReadoutModel(model.linear(), std::move(log), search.grid[best]);
    return ReadoutModel(model.svm(), std::move(log), search.grid[best]);
}

Prediction LsmModel::predict(const MultiHotMatrix& input) const {
    return readout.predict(run_liquid(topology, lif, input, windows).features);
}

Prediction lsm_predict(const LsmModel& model, const MultiHotMatrix& input) { return model.predict(input); }

// ---- persistence ----

namespace {

json synapse_lists(const std::vector<std::vector<Synapse>>& lists) {
    json out = json::array();
    for (const auto& list : lists) {
        json row = json::array();
        for (const auto& s : list) row.push_back({s.target, s.weight});
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<std::vector<Synapse>> synapses_from(const json& j, std::size_t neurons) {
    std::vector<std::vector<Synapse>> out;
    for (const auto& row : j) {
        auto& list = out.emplace_back();
        for (const auto& s : row) {
            const auto target = s.at(0).get<std::uint32_t>();
            if (target >= neurons) throw ValidationError("synapse targets a neuron outside the liquid");
            list.push_back({target, s.at(1).get<double>()});
        }
    }
    return out;
}

json search_log_json(const std::vector<SearchEntry>& log) {
    json out = json::array();
    for (const auto& e : log) out.push_back({e.point.first, e.point.second, e.cv_loss});
    return out;
}

}  // namespace

json to_json(const LsmModel& model) {
    const auto& t = model.topology;
    std::vector<int> excitatory(t.excitatory.begin(), t.excitatory.end());
    json readout;
    const auto& r = model.readout;
    if (r.kind() == ReadoutKind::linear) {
        readout = {{"kind", "linear"}, {"model", forest::to_json(r.linear())}};
    } else {
        const auto& s = r.svm();
        std::vector<std::vector<double>> support;
        for (std::size_t i = 0; i < s.support().rows(); ++i) {
            support.emplace_back(s.support().row(i).begin(), s.support().row(i).end());
        }
        readout = {{"kind", "rbf-svm"},
                   {"mean", s.mean()},
                   {"scale", s.scale()},
                   {"support", support},
                   {"coefficients", s.coefficients()},
                   {"bias", s.bias()},
                   {"sigma", s.sigma()},
                   {"box", s.box()}};
    }
    readout["search_log"] = search_log_json(r.search_log());
    readout["selected"] = {r.selected().first, r.selected().second};
    return {{"format_version", 1},
            {"kind", "lsm"},
            {"topology",
             {{"neuron_count", t.neuron_count},
              {"seed", t.seed},
              {"excitatory", excitatory},
              {"input_map", synapse_lists(t.input_map)},
              {"recurrent", synapse_lists(t.recurrent)}}},
            {"lif",
             {{"membrane_time_constant", model.lif.membrane_time_constant},
              {"threshold", model.lif.threshold},
              {"reset_potential", model.lif.reset_potential},
              {"refractory_period", model.lif.refractory_period},
              {"simulation_step", model.lif.simulation_step}}},
            {"windows", {{"windows", model.windows.windows}, {"window_steps", model.windows.window_steps}}},
            {"readout", readout}};
}

LsmModel lsm_from_json(const json& j) {
    try {
        if (j.at("format_version").get<int>() != 1) throw ArchiveError("unsupported LSM format_version");
        if (j.at("kind").get<std::string>() != "lsm") throw ArchiveError("payload is not an LSM");
        LsmModel m;
        const auto& t = j.at("topology");
        m.topology.neuron_count = t.at("neuron_count").get<std::size_t>();
        m.topology.seed = t.at("seed").get<std::uint64_t>();
        for (int e : t.at("excitatory").get<std::vector<int>>()) m.topology.excitatory.push_back(e != 0);
        m.topology.input_map = synapses_from(t.at("input_map"), m.topology.neuron_count);
        m.topology.recurrent = synapses_from(t.at("recurrent"), m.topology.neuron_count);
        if (m.topology.recurrent.size() != m.topology.neuron_count ||
            m.topology.excitatory.size() != m.topology.neuron_count) {
            throw ValidationError("LSM topology arrays disagree with the neuron count");
        }
        const auto& lif = j.at("lif");
        m.lif = {lif.at("membrane_time_constant").get<double>(), lif.at("threshold").get<double>(),
                 lif.at("reset_potential").get<double>(), lif.at("refractory_period").get<std::size_t>(),
                 lif.at("simulation_step").get<double>()};
        validate(m.lif);
        m.windows = {j.at("windows").at("windows").get<std::size_t>(),
                     j.at("windows").at("window_steps").get<std::size_t>()};

        const auto& r = j.at("readout");
        std::vector<SearchEntry> log;
        for (const auto& e : r.at("search_log")) log.push_back({{e.at(0).get<double>(), e.at(1).get<double>()}, e.at(2).get<double>()});
        const GridPoint selected{r.at("selected").at(0).get<double>(), r.at("selected").at(1).get<double>()};
        if (r.at("kind").get<std::string>() == "linear") {
            m.readout = ReadoutModel(forest::linear_from_json(r.at("model")), std::move(log), selected);
        } else {
            const auto support = FeatureMatrix::from_rows(r.at("support").get<std::vector<std::vector<double>>>());
            m.readout = ReadoutModel(SvmModel(r.at("mean").get<std::vector<double>>(), r.at("scale").get<std::vector<double>>(),
                                              support.rows() ? support : FeatureMatrix(0, r.at("mean").size()),
                                              r.at("coefficients").get<std::vector<double>>(), r.at("bias").get<double>(),
                                              r.at("sigma").get<double>(), r.at("box").get<double>()),
                                     std::move(log), selected);
        }
        return m;
    } catch (const json::exception& e) {
        throw ParseError(std::string("LSM payload: ") + e.what());
    }
}

}  // namespace dynmal::reservoir
