#include "ebrm/training.hpp"

#include <cmath>
#include <numeric>

#include "ebrm/core.hpp"
#include "ebrm/rng.hpp"

namespace ebrm {

using nlohmann::json;

json to_json(const TrainOptions& o) {
    return {{"epochs", o.epochs},
            {"batch_size", o.batch_size},
            {"optimizer", to_json(o.optimizer)},
            {"seed", o.seed},
            {"smoothing_tau", o.smoothing_tau},
            {"empty_bag_loss_cap", o.empty_bag_loss_cap}};
}

TrainOptions train_options_from_json(const json& j) {
    TrainOptions o;
    o.epochs = j.value("epochs", o.epochs);
    o.batch_size = j.value("batch_size", o.batch_size);
    if (j.contains("optimizer")) o.optimizer = optimizer_options_from_json(j["optimizer"]);
    o.seed = j.value("seed", o.seed);
    o.smoothing_tau = j.value("smoothing_tau", o.smoothing_tau);
    o.empty_bag_loss_cap = j.value("empty_bag_loss_cap", o.empty_bag_loss_cap);
    if (o.batch_size == 0) throw ValidationError("batch_size must be positive");
    return o;
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

ScorerParams fit(ScorerParams params, const EncoderConfig& cfg, std::size_t n,
                 const ExampleLoss& loss, const DevEvaluator& dev, const TrainOptions& options,
                 TrainReport* report) {
    if (options.batch_size == 0) throw ValidationError("batch_size must be positive");
    TrainReport local;
    TrainReport& rep = report ? *report : local;
    rep = TrainReport{};
    if (options.epochs == 0 || n == 0) return params;

    Optimizer opt(options.optimizer, cfg);
    Rng rng(options.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Gradients batch_grad(cfg);
    std::optional<ScorerParams> best;

    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double total = 0.0;
        std::size_t capped = 0;
        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const std::size_t stop = std::min(n, start + options.batch_size);
            batch_grad.clear();
            for (std::size_t k = start; k < stop; ++k) {
                bool hit_cap = false;
                const double l = loss(order[k], params, &batch_grad, &hit_cap);
                if (!std::isfinite(l)) {
                    throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) +
                                         ", example " + std::to_string(order[k]));
                }
                total += l;
                capped += hit_cap ? 1 : 0;
            }
            batch_grad.scale(1.0 / static_cast<double>(stop - start));
            if (!batch_grad.all_finite()) {
                throw NonFiniteError("non-finite gradient at epoch " + std::to_string(epoch));
            }
            opt.step(params, batch_grad);
        }
        EpochRecord rec{epoch, total / static_cast<double>(n), std::nullopt};
        if (dev) {
            rec.dev = dev(params);
            if (rec.dev->macro_f1 >= rep.best_dev_macro_f1) {
                rep.best_dev_macro_f1 = rec.dev->macro_f1;
                rep.best_epoch = epoch;
                best = params;
            }
        }
        rep.capped_pairs = capped;
        if (options.log) {
            json line{{"epoch", epoch}, {"loss", rec.mean_loss}, {"capped_pairs", capped}};
            if (rec.dev) line["dev"] = to_json(*rec.dev);
            *options.log << line.dump() << '\n';
        }
        rep.epochs.push_back(rec);
    }
    if (!dev) {
        rep.best_epoch = options.epochs;
        return params;
    }
    return std::move(*best);
}

}  // namespace ebrm
