// q2l: data generation, training, evaluation, inference and attention export.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "q2l/app/attention_map.hpp"
#include "q2l/app/json_config.hpp"
#include "q2l/app/reports.hpp"
#include "q2l/data/dataset_io.hpp"
#include "q2l/data/size_buckets.hpp"
#include "q2l/model/checkpoint.hpp"
#include "q2l/trainer/trainer.hpp"

namespace fs = std::filesystem;
using q2l::Real;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Runs a validation step; any failure becomes a usage error.
template <class Fn>
void validated(Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

/// Accepts either a split directory (holding meta.json) or a dataset root.
fs::path resolve_split(const fs::path& dir, const std::string& split) {
    if (fs::exists(dir / "meta.json")) return dir;
    if (fs::exists(dir / split / "meta.json")) return dir / split;
    throw std::runtime_error("no dataset split found at " + dir.string() + " (looked for meta.json and " + split +
                             "/meta.json)");
}

void check_compatible(const q2l::ModelConfig& m, const q2l::data::DatasetMeta& d, const std::string& what) {
    if (m.num_classes != d.num_classes || m.image_height != d.height || m.image_width != d.width)
        throw std::runtime_error(what + ": model expects " + std::to_string(m.num_classes) + " classes at " +
                                 std::to_string(m.image_height) + "x" + std::to_string(m.image_width) +
                                 ", dataset has " + std::to_string(d.num_classes) + " at " + std::to_string(d.height) +
                                 "x" + std::to_string(d.width));
}

q2l::ModelConfig model_config_of(const q2l::AnyModel<Real>& m) {
    return std::visit([](const auto& x) { return x.config; }, m);
}

q2l::Predictions predict_any(const q2l::AnyModel<Real>& m, std::span<const q2l::data::SampleRecord> s,
                             std::size_t threads) {
    return std::visit([&](const auto& x) { return q2l::predict<Real>(x, s, threads); }, m);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + path.string());
}

/// Adds --dump-config to a subcommand. --config itself lives on the root
/// app and reaches subcommands through fallthrough.
struct ConfigFlags {
    std::string dump_path;

    void attach(CLI::App* sub) {
        sub->config_formatter(std::make_shared<q2l::app::JsonConfig>());
        sub->add_option("--dump-config", dump_path, "Write the effective configuration as JSON and exit")
            ->configurable(false);
        sub->footer("--config FILE  Flat JSON object of flag values, e.g. {\"epochs\": 5}. Flags given on the\n"
                    "               command line take precedence; unknown keys are rejected.");
    }

    bool dump(const CLI::App* sub) const {
        if (dump_path.empty()) return false;
        write_text(dump_path, sub->config_to_str(true, false));
        std::cout << "wrote " << dump_path << '\n';
        return true;
    }
};

// ---- generate-data ----

struct GenerateArgs {
    q2l::data::SynthConfig cfg;
    std::string out;
    ConfigFlags config;
};

void add_generate(CLI::App& app, GenerateArgs& a) {
    auto* sub = app.add_subcommand("generate-data", "Write a synthetic shapes dataset (train/ and test/ splits)");
    a.config.attach(sub);
    auto& c = a.cfg;
    sub->add_option("--out", a.out, "Output dataset root")->required();
    sub->add_option("--seed", c.seed, "Generator seed");
    sub->add_option("--classes", c.num_classes, "Number of categories K");
    sub->add_option("--shapes", c.shapes, "Distinct shapes (1-3)");
    sub->add_option("--colors", c.colors, "Distinct colors (1-6)");
    sub->add_option("--train", c.n_train, "Training images");
    sub->add_option("--test", c.n_test, "Test images");
    sub->add_option("--height", c.height, "Image height");
    sub->add_option("--width", c.width, "Image width");
    sub->add_option("--min-objects", c.min_objects, "Minimum objects per image");
    sub->add_option("--max-objects", c.max_objects, "Maximum objects per image");
    sub->add_option("--min-side", c.min_side, "Smallest object side in pixels");
    sub->add_option("--max-side", c.max_side, "Largest object side in pixels");
    sub->add_option("--small-area", c.thresholds.small, "Box areas up to this count as small");
    sub->add_option("--medium-area", c.thresholds.medium, "Box areas up to this count as medium");
    sub->add_option("--mix-small", c.mix_small, "Relative frequency of small objects");
    sub->add_option("--mix-medium", c.mix_medium, "Relative frequency of medium objects");
    sub->add_option("--mix-large", c.mix_large, "Relative frequency of large objects");
    sub->add_option("--noise", c.noise_amplitude, "Uniform pixel noise amplitude");
    sub->add_option("--max-overlap", c.max_overlap, "Largest allowed overlap, as a fraction of the smaller box");
}

int run_generate(const CLI::App* sub, const GenerateArgs& a) {
    if (a.config.dump(sub)) return 0;
    validated([&] { a.cfg.validate(); });
    q2l::data::generate_dataset(a.cfg, a.out);
    std::cout << "wrote " << a.cfg.n_train << " train and " << a.cfg.n_test << " test images to " << a.out << '\n';
    return 0;
}

// ---- train ----

struct TrainArgs {
    q2l::ModelConfig model;
    q2l::TrainConfig train;
    std::string model_kind = "q2l";
    std::string schedule = "warmup-cosine";
    bool no_ema = false;
    bool no_val = false;
    bool no_self_attention = false;
    std::string data, out;
    ConfigFlags config;
};

void add_train(CLI::App& app, TrainArgs& a) {
    auto* sub = app.add_subcommand("train", "Train a model and write checkpoints plus log.csv");
    a.config.attach(sub);
    auto& m = a.model;
    auto& t = a.train;
    sub->add_option("--data", a.data, "Dataset root holding train/ (and test/ for validation)")->required();
    sub->add_option("--out", a.out, "Run directory for log.csv and checkpoints")->required();
    sub->add_option("--model", a.model_kind, "Model kind")->check(CLI::IsMember({"q2l", "gap"}));
    sub->add_option("--layers", m.decoder_layers, "Decoder layers L");
    sub->add_option("--encoder-layers", m.encoder_layers, "Encoder layers over image features");
    sub->add_option("--width", m.width, "Transformer width d");
    sub->add_option("--feature-width", m.feature_width, "Backbone feature width d0");
    sub->add_option("--heads", m.heads, "Attention heads");
    sub->add_option("--ffn-width", m.ffn_width, "Feed-forward hidden width");
    sub->add_option("--patch", m.patch, "Patch size of the backbone stem");
    sub->add_option("--conv-layers", m.conv_layers, "3x3 conv + relu layers in the backbone");
    sub->add_flag("--no-self-attention", a.no_self_attention, "Drop self-attention among label queries");
    sub->add_option("--gamma-pos", t.loss.gamma_pos, "Focusing exponent for positives");
    sub->add_option("--gamma-neg", t.loss.gamma_neg, "Focusing exponent for negatives");
    sub->add_option("--clamp-eps", t.loss.prob_clamp_eps, "Probability clamp inside the loss");
    sub->add_option("--epochs", t.epochs, "Training epochs");
    sub->add_option("--batch-size", t.batch_size, "Mini-batch size");
    sub->add_option("--lr", t.lr, "Peak learning rate");
    sub->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay");
    sub->add_option("--beta1", t.beta1, "Adam beta1");
    sub->add_option("--beta2", t.beta2, "Adam beta2");
    sub->add_option("--ema-decay", t.ema_decay, "EMA decay");
    sub->add_flag("--no-ema", a.no_ema, "Disable the parameter EMA");
    sub->add_option("--schedule", a.schedule, "Learning-rate schedule")
        ->check(CLI::IsMember({"warmup-cosine", "constant"}));
    sub->add_option("--warmup", t.warmup_fraction, "Warmup fraction of all steps");
    sub->add_option("--seed", t.seed, "Seed for initialization and shuffling");
    sub->add_option("--threshold", t.eval_threshold, "Threshold for validation OF1/CF1");
    sub->add_option("--threads", t.threads, "Worker threads (0: Q2L_THREADS or hardware)");
    sub->add_flag("--no-val", a.no_val, "Skip validation on test/");
    sub->add_flag("--augment", t.augment, "Randomly mirror and shift training images (boxes stay on canvas)");
    sub->add_option("--max-shift", t.max_shift, "Largest augmentation shift in pixels");
}

int run_train(const CLI::App* sub, TrainArgs& a) {
    if (a.config.dump(sub)) return 0;
    a.model.kind = a.model_kind == "gap" ? q2l::ModelKind::gap_baseline : q2l::ModelKind::query2label;
    a.model.self_attention = !a.no_self_attention;
    a.train.use_ema = !a.no_ema;
    a.train.schedule = a.schedule == "constant" ? q2l::Schedule::constant : q2l::Schedule::warmup_cosine;
    validated([&] { a.train.validate(); });

    const auto train_set = q2l::data::load_dataset(resolve_split(a.data, "train"));
    std::optional<q2l::data::Dataset> val_set;
    if (!a.no_val && fs::exists(fs::path(a.data) / "test" / "meta.json"))
        val_set = q2l::data::load_dataset(fs::path(a.data) / "test");
    a.model.num_classes = train_set.meta.num_classes;
    a.model.image_height = train_set.meta.height;
    a.model.image_width = train_set.meta.width;
    validated([&] { a.model.validate(); });
    if (val_set) check_compatible(a.model, val_set->meta, "validation split");

    auto model = q2l::init_model<Real>(a.model, a.train.seed);
    q2l::TrainOutputs outputs{a.out, [](const q2l::EpochLog& e) { std::cout << q2l::format_log_row(e) << std::endl; }};
    std::cout << q2l::kTrainLogHeader << std::endl;
    const std::span<const q2l::data::SampleRecord> val =
        val_set ? std::span<const q2l::data::SampleRecord>(val_set->samples) : std::span<const q2l::data::SampleRecord>{};
    const auto result = std::visit(
        [&](auto& m) { return q2l::train<Real>(m, std::span<const q2l::data::SampleRecord>(train_set.samples), val,
                                               a.train, outputs); },
        model);
    if (val_set)
        std::cout << "best val mAP " << result.best_map << " at epoch " << result.best_epoch << '\n';
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::string checkpoint, predictions, data, out, split = "test";
    double threshold = 0.5;
    std::size_t top_k = 0;
    bool by_size = false;
    std::size_t threads = 0;
    ConfigFlags config;
};

void add_eval(CLI::App& app, EvalArgs& a) {
    auto* sub = app.add_subcommand("eval", "Score a checkpoint or a predictions file on a dataset split");
    a.config.attach(sub);
    auto* ck = sub->add_option("--checkpoint", a.checkpoint, "Checkpoint to evaluate");
    auto* pr = sub->add_option("--predictions", a.predictions, "predictions.jsonl to score instead of a checkpoint");
    ck->excludes(pr);
    sub->add_option("--data", a.data, "Split directory, or dataset root combined with --split")->required();
    sub->add_option("--split", a.split, "Split used when --data is a dataset root");
    sub->add_option("--out", a.out, "Directory for report.txt and ap.csv")->required();
    sub->add_option("--threshold", a.threshold, "Decision threshold tau for OP/OR/OF1/CP/CR/CF1");
    sub->add_option("--top-k", a.top_k, "Also report metrics for the top-k predictions per image (0: off)");
    sub->add_flag("--by-size", a.by_size, "Report mAP per object-size bucket");
    sub->add_option("--threads", a.threads, "Worker threads (0: Q2L_THREADS or hardware)");
}

int run_eval(const CLI::App* sub, const EvalArgs& a) {
    if (a.config.dump(sub)) return 0;
    if (a.checkpoint.empty() == a.predictions.empty())
        throw UsageError("eval needs exactly one of --checkpoint or --predictions");
    if (!(a.threshold > 0 && a.threshold < 1)) throw UsageError("--threshold must lie in (0, 1)");
    const auto ds = q2l::data::load_dataset(resolve_split(a.data, a.split));
    if (a.top_k > ds.meta.num_classes)
        throw UsageError("--top-k " + std::to_string(a.top_k) + " exceeds " + std::to_string(ds.meta.num_classes) +
                         " categories");
    q2l::Predictions p;
    if (!a.checkpoint.empty()) {
        const auto ck = q2l::load_checkpoint<Real>(a.checkpoint);
        check_compatible(model_config_of(ck.model), ds.meta, a.checkpoint);
        p = predict_any(ck.model, ds.samples, a.threads);
    } else {
        p = q2l::app::read_predictions(a.predictions, ds.samples, ds.meta.num_classes);
    }
    std::optional<q2l::data::BucketViews> views;
    if (a.by_size) views = q2l::data::size_bucket_eval_split(ds.samples, ds.meta.num_classes, ds.meta.thresholds);
    const auto report = q2l::app::evaluate(p, a.threshold, a.top_k ? std::optional(a.top_k) : std::nullopt,
                                           views ? &*views : nullptr);
    fs::create_directories(a.out);
    const auto text = q2l::app::format_report(report, p.samples);
    write_text(fs::path(a.out) / "report.txt", text);
    write_text(fs::path(a.out) / "ap.csv", q2l::app::format_ap_csv(report));
    std::cout << text;
    return 0;
}

// ---- infer ----

struct InferArgs {
    std::string checkpoint, data, image, out, split = "test";
    double threshold = 0.5;
    std::size_t top_k = 0;
    std::size_t threads = 0;
    ConfigFlags config;
};

void add_infer(CLI::App& app, InferArgs& a) {
    auto* sub = app.add_subcommand("infer", "Write per-image probabilities and predicted labels as JSON lines");
    a.config.attach(sub);
    sub->add_option("--checkpoint", a.checkpoint, "Checkpoint to run")->required();
    auto* d = sub->add_option("--data", a.data, "Split directory, or dataset root combined with --split");
    auto* im = sub->add_option("--image", a.image, "Single P6 PPM image");
    d->excludes(im);
    sub->add_option("--split", a.split, "Split used when --data is a dataset root");
    sub->add_option("--out", a.out, "Output predictions.jsonl")->required();
    sub->add_option("--threshold", a.threshold, "Decision threshold for the predicted list");
    sub->add_option("--top-k", a.top_k, "Predict the k highest-scoring categories instead (0: off)");
    sub->add_option("--threads", a.threads, "Worker threads (0: Q2L_THREADS or hardware)");
}

q2l::data::SampleRecord image_sample(const fs::path& path, std::size_t classes) {
    q2l::data::SampleRecord s;
    s.image = q2l::data::read_ppm(path, s.height, s.width);
    s.labels.assign(classes, 0);
    return s;
}

int run_infer(const CLI::App* sub, const InferArgs& a) {
    if (a.config.dump(sub)) return 0;
    if (a.data.empty() == a.image.empty()) throw UsageError("infer needs exactly one of --data or --image");
    if (!(a.threshold > 0 && a.threshold < 1)) throw UsageError("--threshold must lie in (0, 1)");
    const auto ck = q2l::load_checkpoint<Real>(a.checkpoint);
    const auto mc = model_config_of(ck.model);
    if (a.top_k > mc.num_classes) throw UsageError("--top-k exceeds the model's category count");
    std::vector<q2l::data::SampleRecord> samples;
    if (!a.data.empty()) {
        auto ds = q2l::data::load_dataset(resolve_split(a.data, a.split));
        check_compatible(mc, ds.meta, a.checkpoint);
        samples = std::move(ds.samples);
    } else {
        samples.push_back(image_sample(a.image, mc.num_classes));
        if (samples[0].height != mc.image_height || samples[0].width != mc.image_width)
            throw std::runtime_error(a.image + " is " + std::to_string(samples[0].height) + "x" +
                                     std::to_string(samples[0].width) + ", model expects " +
                                     std::to_string(mc.image_height) + "x" + std::to_string(mc.image_width));
    }
    const auto p = predict_any(ck.model, samples, a.threads);
    std::vector<std::size_t> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    const q2l::EvalMode mode =
        a.top_k ? q2l::EvalMode{q2l::TopKMode{a.top_k}} : q2l::EvalMode{q2l::ThresholdMode{a.threshold}};
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    q2l::app::write_predictions(a.out, ids, p, mode);
    std::cout << "wrote " << samples.size() << " predictions to " << a.out << '\n';
    return 0;
}

// ---- export-attn ----

struct AttnArgs {
    std::string checkpoint, image, out, label = "all";
    double scale = 0.06;
    bool bilinear = false;
    ConfigFlags config;
};

void add_attn(CLI::App& app, AttnArgs& a) {
    auto* sub = app.add_subcommand("export-attn", "Write final-layer cross-attention maps as PGM images");
    a.config.attach(sub);
    sub->add_option("--checkpoint", a.checkpoint, "Query2Label checkpoint")->required();
    sub->add_option("--image", a.image, "P6 PPM image")->required();
    sub->add_option("--label", a.label, "Category id, or 'all'");
    sub->add_option("--out", a.out, "Output directory")->required();
    sub->add_option("--attn-scale", a.scale, "Attention values are divided by this and clipped to [0, 1]");
    sub->add_flag("--bilinear", a.bilinear, "Bilinear instead of nearest-neighbor upsampling");
}

int run_attn(const CLI::App* sub, const AttnArgs& a) {
    if (a.config.dump(sub)) return 0;
    if (!(a.scale > 0)) throw UsageError("--attn-scale must be positive");
    std::optional<std::size_t> only;
    if (a.label != "all") {
        validated([&] {
            std::size_t used = 0;
            only = std::stoul(a.label, &used);
            if (used != a.label.size()) throw std::invalid_argument("bad label");
        });
    }
    const auto ck = q2l::load_checkpoint<Real>(a.checkpoint);
    const auto* model = std::get_if<q2l::Query2Label<Real>>(&ck.model);
    if (!model) throw std::runtime_error(a.checkpoint + " is not a Query2Label checkpoint (no attention maps)");
    const auto& mc = model->config;
    if (only && *only >= mc.num_classes)
        throw UsageError("--label " + a.label + " out of range for " + std::to_string(mc.num_classes) + " categories");
    const auto s = image_sample(a.image, mc.num_classes);
    if (s.height != mc.image_height || s.width != mc.image_width)
        throw std::runtime_error(a.image + " does not match the model input size");

    q2l::NoGradGuard no_grad;
    const auto fwd = model->forward(q2l::image_tensor<Real>(s));
    const auto& maps = fwd.cross_maps.back();
    const std::vector<double> flat(maps.data().begin(), maps.data().end());
    const auto mode = a.bilinear ? q2l::app::Upsample::bilinear : q2l::app::Upsample::nearest;
    fs::create_directories(a.out);
    const std::size_t heads = maps.dim(0);
    for (std::size_t k = 0; k < mc.num_classes; ++k) {
        if (only && k != *only) continue;
        const auto r = q2l::app::render_label_maps(flat, heads, mc.num_classes, k, mc.grid_height(),
                                                   mc.grid_width(), s.height, s.width, a.scale, mode);
        const std::string stem = "label" + std::to_string(k);
        for (std::size_t h = 0; h < heads; ++h)
            q2l::app::write_pgm(fs::path(a.out) / (stem + "_head" + std::to_string(h) + ".pgm"),
                                q2l::app::quantize(r.heads[h], s.height, s.width));
        q2l::app::write_pgm(fs::path(a.out) / (stem + "_mean.pgm"), q2l::app::quantize(r.mean, s.height, s.width));
        std::cout << "label " << k << " p=" << fwd.probs[k] << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Query2Label on synthetic multi-label images"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.fallthrough();
    app.config_formatter(std::make_shared<q2l::app::JsonConfig>([&app] {
        const auto subs = app.get_subcommands();
        return subs.empty() ? std::string() : subs.front()->get_name();
    }));
    app.set_config("--config", "", "Flat JSON file of flag values for the chosen subcommand")->configurable(false);
    app.allow_config_extras(CLI::config_extras_mode::error);

    GenerateArgs gen;
    TrainArgs tr;
    EvalArgs ev;
    InferArgs inf;
    AttnArgs attn;
    add_generate(app, gen);
    add_train(app, tr);
    add_eval(app, ev);
    add_infer(app, inf);
    add_attn(app, attn);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ConfigError& e) {
        std::string msg = e.what();
        const std::string prefix = "INI was not able to parse ";
        if (msg.rfind(prefix, 0) == 0) {
            std::string key = msg.substr(prefix.size());
            if (const auto dot = key.find('.'); dot != std::string::npos) key = key.substr(dot + 1);
            msg = "unknown config key '" + key + "'";
        }
        std::cerr << "error: " << msg << '\n';
        return 2;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        if (name == "generate-data") return run_generate(sub, gen);
        if (name == "train") return run_train(sub, tr);
        if (name == "eval") return run_eval(sub, ev);
        if (name == "infer") return run_infer(sub, inf);
        return run_attn(sub, attn);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
