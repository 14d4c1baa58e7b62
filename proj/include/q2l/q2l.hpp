#pragma once

#include "q2l/data/dataset_io.hpp"
#include "q2l/data/size_buckets.hpp"
#include "q2l/data/synth.hpp"
#include "q2l/metrics.hpp"
#include "q2l/model/checkpoint.hpp"
#include "q2l/model/gap_baseline.hpp"
#include "q2l/model/query2label.hpp"
#include "q2l/numcore.hpp"
#include "q2l/objective.hpp"
#include "q2l/trainer/optim.hpp"
#include "q2l/trainer/trainer.hpp"
#include "q2l/transformer/attention.hpp"
#include "q2l/transformer/decoder.hpp"
#include "q2l/transformer/position_encoding.hpp"
