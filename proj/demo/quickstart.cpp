// Trains a small Query2Label model on in-memory synthetic images and prints
// the validation curve. Everything stays in memory; nothing is written.

#include <iostream>

#include "q2l/data/dataset_io.hpp"
#include "q2l/model/query2label.hpp"
#include "q2l/trainer/trainer.hpp"

int main() {
    q2l::data::SynthConfig data;
    data.num_classes = 6;
    data.shapes = 2;
    data.colors = 3;
    data.height = data.width = 32;
    data.max_side = 24;
    data.max_objects = 3;
    const auto train = q2l::data::generate_split(data, q2l::data::kTrainSplit, 300);
    const auto test = q2l::data::generate_split(data, q2l::data::kTestSplit, 100);

    q2l::ModelConfig cfg;
    cfg.num_classes = data.num_classes;
    cfg.image_height = cfg.image_width = 32;
    cfg.width = 32;
    cfg.feature_width = 32;
    cfg.ffn_width = 64;
    cfg.decoder_layers = 1;
    auto model = q2l::init_query2label<q2l::Real>(cfg, 0);

    q2l::TrainConfig t;
    t.epochs = 8;
    t.batch_size = 16;
    t.lr = 1e-3;
    t.use_ema = false;
    std::cout << q2l::kTrainLogHeader << '\n';
    q2l::TrainOutputs out{{}, [](const q2l::EpochLog& e) { std::cout << q2l::format_log_row(e) << std::endl; }};
    const auto r = q2l::train<q2l::Real>(model, std::span<const q2l::data::SampleRecord>(train),
                                         std::span<const q2l::data::SampleRecord>(test), t, out);
    std::cout << "best test mAP " << r.best_map << " (epoch " << r.best_epoch << ")\n";
}
