#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "q2l/data/synth.hpp"
#include "q2l/metrics.hpp"
#include "q2l/model/checkpoint.hpp"
#include "q2l/objective.hpp"
#include "q2l/trainer/optim.hpp"
#include "q2l/trainer/parallel.hpp"

namespace q2l {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class M, class T>
concept Classifier = requires(M m, const M& cm, const Tensor<T>& x) {
    { cm.logits(x) } -> std::same_as<Tensor<T>>;
    { cm.num_classes() } -> std::convertible_to<std::size_t>;
    m.visit([](const std::string&, Tensor<T>&) {});
};

/// H x W x 3 tensor with pixel values mapped to [-0.5, 0.5].
template <class T>
Tensor<T> image_tensor(const data::SampleRecord& s) {
    std::vector<T> v(s.image.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(s.image[i]) / T(255) - T(0.5);
    return Tensor<T>({s.height, s.width, 3}, std::move(v));
}

/// Training-time view of a sample: optional horizontal mirror, then a shift
/// by (dx, dy) pixels with edge replication. The shift range is limited so
/// every ground-truth box stays on the canvas, which keeps labels exact.
template <class T>
Tensor<T> augmented_image_tensor(const data::SampleRecord& s, std::uint64_t seed, std::size_t max_shift) {
    std::mt19937_64 rng(seed);
    const bool flip = (rng() & 1) != 0;
    const auto h = static_cast<long>(s.height), w = static_cast<long>(s.width);
    long x0 = w, y0 = h, x1 = 0, y1 = 0;
    for (const auto& b : s.boxes) {
        const long bx = flip ? w - static_cast<long>(b.x + b.w) : static_cast<long>(b.x);
        x0 = std::min(x0, bx);
        x1 = std::max(x1, bx + static_cast<long>(b.w));
        y0 = std::min(y0, static_cast<long>(b.y));
        y1 = std::max(y1, static_cast<long>(b.y + b.h));
    }
    const long m = static_cast<long>(max_shift);
    const auto draw = [&](long lo, long hi) { return lo >= hi ? 0L : lo + static_cast<long>(rng() % (hi - lo + 1)); };
    const long dx = s.boxes.empty() ? 0 : draw(std::max(-m, -x0), std::min(m, w - x1));
    const long dy = s.boxes.empty() ? 0 : draw(std::max(-m, -y0), std::min(m, h - y1));
    std::vector<T> v(s.image.size());
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            const long sy = std::clamp(y - dy, 0L, h - 1);
            long sx = std::clamp(x - dx, 0L, w - 1);
            if (flip) sx = w - 1 - sx;
            for (long c = 0; c < 3; ++c)
                v[static_cast<std::size_t>((y * w + x) * 3 + c)] =
                    static_cast<T>(s.image[static_cast<std::size_t>((sy * w + sx) * 3 + c)]) / T(255) - T(0.5);
        }
    return Tensor<T>({s.height, s.width, 3}, std::move(v));
}

template <class T>
std::vector<T> label_vector(const data::SampleRecord& s) {
    return {s.labels.begin(), s.labels.end()};
}

template <class T, class Model>
std::vector<Tensor<T>> parameter_list(Model& m) {
    std::vector<Tensor<T>> out;
    m.visit([&](const std::string&, Tensor<T>& t) { out.push_back(t); });
    return out;
}

/// Forward pass over samples without recording; rows follow sample order.
template <class T, class Model>
Predictions predict(const Model& model, std::span<const data::SampleRecord> samples, std::size_t workers = 0) {
    Predictions p;
    p.samples = samples.size();
    p.classes = model.num_classes();
    p.probs.assign(p.samples * p.classes, 0.0);
    p.labels.assign(p.samples * p.classes, 0);
    parallel_chunks(samples.size(), workers ? workers : worker_count(),
                    [&](std::size_t, std::size_t begin, std::size_t end) {
                        NoGradGuard no_grad;
                        for (std::size_t n = begin; n < end; ++n) {
                            const auto& s = samples[n];
                            if (s.labels.size() != p.classes)
                                throw ShapeError("predict: sample label width does not match model classes");
                            const auto probs = sigmoid(model.logits(image_tensor<T>(s)));
                            for (std::size_t k = 0; k < p.classes; ++k) {
                                p.probs[n * p.classes + k] = static_cast<double>(probs[k]);
                                p.labels[n * p.classes + k] = s.labels[k];
                            }
                        }
                    });
    return p;
}

struct EvalSummary {
    double map = 0, of1 = 0, cf1 = 0;
};

inline EvalSummary summarize(const Predictions& p, double threshold) {
    const auto aps = per_category_ap(p);
    const auto tm = threshold_metrics(p, ThresholdMode{threshold});
    return {mean_ap(aps).value, tm.overall_f1, tm.class_f1};
}

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.9999;
    double adam_eps = 1e-8;
    double weight_decay = 1e-2;
    bool use_ema = true;
    double ema_decay = 0.9997;
    Schedule schedule = Schedule::warmup_cosine;
    double warmup_fraction = 0.05;
    LossConfig loss;
    std::uint64_t seed = 0;
    double eval_threshold = 0.5;
    std::size_t threads = 0;  // 0: worker_count()
    bool augment = false;
    std::size_t max_shift = 8;

    void validate() const {
        const auto fail = [](const std::string& m) { throw ConfigError("invalid training config: " + m); };
        if (epochs < 1) fail("epochs must be >= 1");
        if (batch_size < 1) fail("batch size must be >= 1");
        if (!(lr >= 0)) fail("learning rate must be nonnegative");
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
        if (!(adam_eps > 0)) fail("adam eps must be positive");
        if (!(weight_decay >= 0)) fail("weight decay must be nonnegative");
        if (!(ema_decay >= 0 && ema_decay <= 1)) fail("ema decay must lie in [0, 1]");
        if (!(warmup_fraction >= 0 && warmup_fraction < 1)) fail("warmup fraction must lie in [0, 1)");
        if (!(eval_threshold > 0 && eval_threshold < 1)) fail("eval threshold must lie in (0, 1)");
        try {
            loss.validate();
        } catch (const std::invalid_argument& e) {
            fail(e.what());
        }
    }
};

struct EpochLog {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    double lr = 0;
    double train_loss = 0;
    double val_map = std::nan(""), val_of1 = std::nan(""), val_cf1 = std::nan("");
    double ema_val_map = std::nan("");
};

struct TrainResult {
    std::vector<EpochLog> log;
    double best_map = -1;
    std::size_t best_epoch = 0;
    double best_ema_map = -1;
    std::size_t best_ema_epoch = 0;
};

inline constexpr const char* kTrainLogHeader = "epoch,step,lr,train_loss,val_mAP,val_OF1,val_CF1";

inline std::string format_log_row(const EpochLog& e) {
    std::ostringstream os;
    os << std::setprecision(9) << e.epoch << ',' << e.step << ',' << e.lr << ',' << e.train_loss << ',' << e.val_map
       << ',' << e.val_of1 << ',' << e.val_cf1;
    return os.str();
}

/// Output locations for a training run; an empty directory disables writing.
struct TrainOutputs {
    std::filesystem::path dir;
    std::function<void(const EpochLog&)> on_epoch;
};

/// Mini-batch training with per-sample gradients averaged in sample order,
/// so results do not depend on the worker count. Each worker owns a private
/// model replica and tape; reduction and the optimizer step are serial.
/// The model is left at its final parameters.
template <class T, class Model>
    requires Classifier<Model, T>
TrainResult train(Model& model, std::span<const data::SampleRecord> train_set,
                  std::span<const data::SampleRecord> val_set, const TrainConfig& cfg, const TrainOutputs& out = {}) {
    cfg.validate();
    if (train_set.empty()) throw TrainingError("train: empty training set");

    const std::size_t workers = std::min(cfg.threads ? cfg.threads : worker_count(), cfg.batch_size);
    auto params = parameter_list<T>(model);
    std::vector<std::size_t> offsets;
    std::size_t total_params = 0;
    for (const auto& p : params) {
        offsets.push_back(total_params);
        total_params += p.numel();
    }

    std::vector<Model> replicas;
    std::vector<std::vector<Tensor<T>>> replica_params;
    for (std::size_t w = 0; w < workers; ++w) {
        replicas.push_back(clone_model<T>(model));
        replica_params.push_back(parameter_list<T>(replicas.back()));
    }
    const auto sync_replicas = [&] {
        for (auto& rp : replica_params)
            for (std::size_t i = 0; i < rp.size(); ++i)
                std::copy(params[i].data().begin(), params[i].data().end(), rp[i].mutable_data().begin());
    };

    OptimState<T> opt;
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.adam_eps;
    opt.weight_decay = cfg.weight_decay;
    auto ema = EmaState<T>::from(params, cfg.ema_decay);

    const std::size_t batches_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::uint64_t total_steps = cfg.epochs * batches_per_epoch;
    std::vector<std::vector<T>> sample_grads(cfg.batch_size, std::vector<T>(total_params));
    std::vector<double> sample_loss(cfg.batch_size);
    std::vector<std::vector<T>> grads(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) grads[i].assign(params[i].numel(), T(0));

    std::ofstream log_file;
    if (!out.dir.empty()) {
        std::filesystem::create_directories(out.dir);
        log_file.open(out.dir / "log.csv", std::ios::trunc);
        log_file << kTrainLogHeader << '\n';
    }

    TrainResult result;
    std::vector<std::size_t> order(train_set.size());
    std::uint64_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 shuffle_rng(data::splitmix64(cfg.seed ^ data::splitmix64(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0;
        EpochLog entry;
        entry.epoch = epoch;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const std::size_t begin = b * cfg.batch_size;
            const std::size_t count = std::min(cfg.batch_size, train_set.size() - begin);
            opt.lr = scheduled_lr(cfg.schedule, cfg.lr, step, total_steps, cfg.warmup_fraction);

            parallel_chunks(count, workers, [&](std::size_t w, std::size_t lo, std::size_t hi) {
                auto& rep = replicas[w];
                auto& rp = replica_params[w];
                for (std::size_t i = lo; i < hi; ++i) {
                    const auto& s = train_set[order[begin + i]];
                    for (auto& p : rp) p.zero_grad();
                    Tape<T>::current().clear();
                    const auto y = label_vector<T>(s);
                    const auto x = cfg.augment
                                       ? augmented_image_tensor<T>(
                                             s, data::splitmix64(cfg.seed ^ data::splitmix64(epoch * 1000003 + s.id)),
                                             cfg.max_shift)
                                       : image_tensor<T>(s);
                    const auto loss = asymmetric_loss(sigmoid(rep.logits(x)), std::span<const T>(y),
                                                      cfg.loss);
                    sample_loss[i] = static_cast<double>(loss.item());
                    backward(loss);
                    auto& slot = sample_grads[i];
                    for (std::size_t k = 0; k < rp.size(); ++k) {
                        const auto& g = rp[k].storage()->grad;
                        if (g.empty())
                            std::fill_n(slot.begin() + static_cast<std::ptrdiff_t>(offsets[k]), rp[k].numel(), T(0));
                        else
                            std::copy(g.begin(), g.end(), slot.begin() + static_cast<std::ptrdiff_t>(offsets[k]));
                    }
                }
            });

            double batch_loss = 0;
            for (std::size_t i = 0; i < count; ++i) batch_loss += sample_loss[i];
            if (!std::isfinite(batch_loss)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", batch " << b << " (lr=" << opt.lr << ")";
                throw TrainingError(msg.str());
            }
            epoch_loss += batch_loss;

            const T inv = T(1) / static_cast<T>(count);
            for (std::size_t k = 0; k < params.size(); ++k) {
                auto& g = grads[k];
                std::fill(g.begin(), g.end(), T(0));
                for (std::size_t i = 0; i < count; ++i) {
                    const T* src = sample_grads[i].data() + offsets[k];
                    for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
                }
                for (auto& v : g) v *= inv;
            }
            optim_step(params, grads, opt);
            if (cfg.use_ema) ema_update(ema, params);
            sync_replicas();
            ++step;
            entry.lr = opt.lr;
        }
        entry.step = step;
        entry.train_loss = epoch_loss / static_cast<double>(train_set.size());

        bool improved = false, ema_improved = false;
        Model ema_model;
        if (!val_set.empty()) {
            const auto s = summarize(predict<T>(model, val_set, workers), cfg.eval_threshold);
            entry.val_map = s.map;
            entry.val_of1 = s.of1;
            entry.val_cf1 = s.cf1;
            improved = s.map > result.best_map;
            if (cfg.use_ema) {
                ema_model = clone_model<T>(model);
                auto ep = parameter_list<T>(ema_model);
                for (std::size_t i = 0; i < ep.size(); ++i)
                    std::copy(ema.shadow[i].begin(), ema.shadow[i].end(), ep[i].mutable_data().begin());
                entry.ema_val_map = summarize(predict<T>(ema_model, val_set, workers), cfg.eval_threshold).map;
                ema_improved = entry.ema_val_map > result.best_ema_map;
            }
        } else {
            improved = true;
        }
        if (improved) {
            result.best_map = std::isnan(entry.val_map) ? result.best_map : entry.val_map;
            result.best_epoch = epoch;
        }
        if (ema_improved) {
            result.best_ema_map = entry.ema_val_map;
            result.best_ema_epoch = epoch;
        }
        if (!out.dir.empty()) {
            const nlohmann::json extra = {{"epoch", epoch}, {"seed", cfg.seed}};
            if (improved) save_checkpoint<T>(out.dir / "best.ckpt", model, extra);
            if (ema_improved) save_checkpoint<T>(out.dir / "best_ema.ckpt", ema_model, extra);
            log_file << format_log_row(entry) << '\n';
            log_file.flush();
        }
        result.log.push_back(entry);
        if (out.on_epoch) out.on_epoch(entry);
    }
    if (!out.dir.empty()) save_checkpoint<T>(out.dir / "last.ckpt", model, {{"epoch", cfg.epochs}, {"seed", cfg.seed}});
    return result;
}

}  // namespace q2l
