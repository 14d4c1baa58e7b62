#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "q2l/data/dataset_io.hpp"
#include "q2l/data/size_buckets.hpp"

using namespace q2l::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "q2l_data_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

SynthConfig small_config(std::size_t n_train = 40, std::size_t n_test = 12) {
    SynthConfig c;
    c.n_train = n_train;
    c.n_test = n_test;
    c.seed = 3;
    return c;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream is(e.path(), std::ios::binary);
        out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(is), {}};
    }
    return out;
}

void overwrite(const fs::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << bytes;
}

std::string read_all(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

SampleRecord one_box_sample(std::size_t id, std::size_t classes, std::vector<Box> boxes) {
    SampleRecord s;
    s.id = id;
    s.height = s.width = 48;
    s.labels.assign(classes, 0);
    for (const auto& b : boxes) s.labels[b.category] = 1;
    s.boxes = std::move(boxes);
    return s;
}

}  // namespace

TEST(GenerateDataset, SameSeedGivesByteIdenticalTrees) {
    const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
    generate_dataset(small_config(), a);
    generate_dataset(small_config(), b);
    const auto ta = tree_bytes(a), tb = tree_bytes(b);
    EXPECT_EQ(ta.size(), 2u * 2u + 40u + 12u);
    EXPECT_TRUE(ta == tb);
    auto other = small_config();
    other.seed = 4;
    const auto c = fresh_dir("det_c");
    generate_dataset(other, c);
    EXPECT_NE(tree_bytes(c).at("train/labels.jsonl"), ta.at("train/labels.jsonl"));
}

TEST(GenerateDataset, SingleObjectConfigGivesOneLabelEach) {
    auto cfg = small_config(200, 0);
    cfg.min_objects = cfg.max_objects = 1;
    for (const auto& s : generate_split(cfg, kTrainSplit, cfg.n_train)) {
        EXPECT_EQ(std::accumulate(s.labels.begin(), s.labels.end(), 0), 1);
        EXPECT_EQ(s.boxes.size(), 1u);
    }
}

TEST(GenerateDataset, DefaultConfigLabelStatisticsAndCoverage) {
    const SynthConfig cfg;
    const auto samples = generate_split(cfg, kTrainSplit, cfg.n_train);
    double labels = 0;
    std::vector<std::size_t> images_with(cfg.num_classes, 0);
    std::array<std::size_t, 3> bucket_counts{};
    for (const auto& s : samples) {
        for (std::size_t k = 0; k < cfg.num_classes; ++k) {
            labels += s.labels[k];
            images_with[k] += s.labels[k];
        }
        for (const auto& b : s.boxes) ++bucket_counts[static_cast<std::size_t>(bucket_of(b.area(), cfg.thresholds))];
    }
    const double mean = labels / static_cast<double>(samples.size());
    EXPECT_GE(mean, 2.4);
    EXPECT_LE(mean, 3.4);
    for (std::size_t k = 0; k < cfg.num_classes; ++k)
        EXPECT_GE(static_cast<double>(images_with[k]), 0.01 * static_cast<double>(samples.size())) << "class " << k;
    for (auto c : bucket_counts) EXPECT_GT(c, 0u);
}

TEST(GenerateDataset, LabelsAndBoxesAreConsistent) {
    const auto cfg = small_config(300, 0);
    for (const auto& s : generate_split(cfg, kTrainSplit, cfg.n_train)) {
        std::vector<std::uint8_t> from_boxes(cfg.num_classes, 0);
        for (const auto& b : s.boxes) {
            ASSERT_LT(b.category, cfg.num_classes);
            EXPECT_LE(b.x + b.w, cfg.width);
            EXPECT_LE(b.y + b.h, cfg.height);
            from_boxes[b.category] = 1;
        }
        EXPECT_EQ(from_boxes, s.labels);
        EXPECT_EQ(s.image.size(), cfg.height * cfg.width * 3);
    }
}

TEST(GenerateDataset, UnsatisfiableConfigIsRejected) {
    auto cfg = small_config();
    cfg.num_classes = 13;
    EXPECT_THROW(cfg.validate(), DatasetError);
    EXPECT_THROW(generate_dataset(cfg, fresh_dir("bad")), DatasetError);
    cfg = small_config();
    cfg.min_objects = 4;
    cfg.max_objects = 2;
    EXPECT_THROW(cfg.validate(), DatasetError);
}

TEST(GenerateDataset, MetaJsonLayout) {
    const auto dir = fresh_dir("meta");
    generate_dataset(small_config(), dir);
    const auto j = nlohmann::json::parse(read_all(dir / "train" / "meta.json"));
    EXPECT_EQ(j["K"], 12);
    EXPECT_EQ(j["canvas"], nlohmann::json::array({48, 48}));
    EXPECT_EQ(j["seed"], 3);
    EXPECT_EQ(j["thresholds"]["small"], 64);
    EXPECT_EQ(j["thresholds"]["medium"], 400);
    const auto first = read_all(dir / "train" / "labels.jsonl");
    EXPECT_EQ(first.rfind("{\"id\":0,\"labels\":[", 0), 0u) << first.substr(0, 40);
    EXPECT_EQ(read_all(dir / "train" / "images" / "000000.ppm").substr(0, 13), "P6\n48 48\n255\n");
}

TEST(LoadDataset, RoundTripsGeneratedSamples) {
    const auto dir = fresh_dir("roundtrip");
    const auto cfg = small_config();
    generate_dataset(cfg, dir);
    const auto ds = load_dataset(dir / "train");
    const auto expect = generate_split(cfg, kTrainSplit, cfg.n_train);
    ASSERT_EQ(ds.samples.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
        EXPECT_EQ(ds.samples[i].labels, expect[i].labels);
        EXPECT_EQ(ds.samples[i].boxes, expect[i].boxes);
        EXPECT_EQ(ds.samples[i].image, expect[i].image);
    }
    EXPECT_EQ(ds.meta.num_classes, 12u);
    EXPECT_EQ(load_dataset(dir / "test").samples.size(), cfg.n_test);
}

TEST(LoadDataset, TruncatedImageNamesTheFile) {
    const auto dir = fresh_dir("truncated");
    generate_dataset(small_config(), dir);
    const auto img = dir / "train" / "images" / "000005.ppm";
    const auto bytes = read_all(img);
    overwrite(img, bytes.substr(0, bytes.size() - 10));
    try {
        load_dataset(dir / "train");
        FAIL() << "expected DatasetError";
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("000005.ppm"), std::string::npos) << e.what();
    }
}

TEST(LoadDataset, RejectsHeaderDeviations) {
    const auto dir = fresh_dir("ppm_header");
    generate_dataset(small_config(), dir);
    const auto img = dir / "train" / "images" / "000001.ppm";
    auto bytes = read_all(img);
    overwrite(img, "P3" + bytes.substr(2));
    EXPECT_THROW(load_dataset(dir / "train"), DatasetError);
    overwrite(img, "P6\n48 48\n254\n" + bytes.substr(13));
    EXPECT_THROW(load_dataset(dir / "train"), DatasetError);
    overwrite(img, bytes + "x");
    EXPECT_THROW(load_dataset(dir / "train"), DatasetError);
}

TEST(LoadDataset, LabelOutOfRangeIsValidationError) {
    const auto dir = fresh_dir("bad_label");
    generate_dataset(small_config(), dir);
    const auto path = dir / "train" / "labels.jsonl";
    auto text = read_all(path);
    const auto end = text.find('\n');
    overwrite(path, R"({"id":0,"labels":[12],"boxes":[[1,1,5,5,12]]})" + text.substr(end));
    try {
        load_dataset(dir / "train");
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("K=12"), std::string::npos) << e.what();
    }
}

TEST(LoadDataset, MalformedLinesAreRejected) {
    const auto dir = fresh_dir("bad_lines");
    generate_dataset(small_config(), dir);
    const auto path = dir / "train" / "labels.jsonl";
    const auto text = read_all(path);
    const auto rest = text.substr(text.find('\n'));
    for (const std::string bad : {
             R"({"id":0,"labels":[1],"boxes":[[1,1,5,5,2]]})",           // labels disagree with boxes
             R"({"id":1,"labels":[1],"boxes":[[1,1,5,5,1]]})",           // id out of sequence
             R"({"id":0,"labels":[1],"boxes":[[45,1,5,5,1]]})",          // box leaves canvas
             R"({"id":0,"labels":[1],"boxes":[[1,1,5,5,1]],"x":1})",     // extra key
             R"({"id":0,"labels":[2,1],"boxes":[[1,1,5,5,1],[1,1,5,5,2]]})",  // unsorted labels
             R"({"id":0,"labels":[1],"boxes":[[1,1,5,5]]})",             // short box
             R"({"id":0,"labels":[1],)"}) {
        overwrite(path, bad + rest);
        EXPECT_THROW(load_dataset(dir / "train"), DatasetError) << bad;
    }
    overwrite(path, text.substr(0, text.size() - 1 - (text.size() - 1 - text.rfind('\n', text.size() - 2))));
    EXPECT_THROW(load_dataset(dir / "train"), DatasetError);  // record count below meta count
}

TEST(LoadDataset, MetaDeviationsAreRejected) {
    const auto dir = fresh_dir("bad_meta");
    generate_dataset(small_config(), dir);
    const auto path = dir / "train" / "meta.json";
    auto j = nlohmann::json::parse(read_all(path));
    j["extra"] = 1;
    overwrite(path, j.dump());
    EXPECT_THROW(load_dataset(dir / "train"), DatasetError);
    j.erase("extra");
    j.erase("seed");
    overwrite(path, j.dump());
    EXPECT_THROW(load_dataset(dir / "train"), DatasetError);
    EXPECT_THROW(load_dataset(dir / "nowhere"), DatasetError);
}

TEST(SizeBuckets, BoundaryAreaIsInclusive) {
    const SizeThresholds t;
    EXPECT_EQ(bucket_of(64, t), SizeBucket::small);
    EXPECT_EQ(bucket_of(65, t), SizeBucket::medium);
    EXPECT_EQ(bucket_of(400, t), SizeBucket::medium);
    EXPECT_EQ(bucket_of(401, t), SizeBucket::large);
}

TEST(SizeBuckets, LargestObjectDecidesThePair) {
    std::vector<SampleRecord> s{one_box_sample(0, 3, {{0, 0, 8, 8, 1}, {10, 10, 21, 21, 1}, {0, 30, 9, 9, 2}})};
    const auto v = size_bucket_eval_split(s, 3, SizeThresholds{});
    EXPECT_EQ(v.include[2][1], 1);  // class 1: largest box 441 px -> large
    EXPECT_EQ(v.include[0][1], 0);
    EXPECT_EQ(v.include[1][2], 1);  // class 2: 81 px -> medium
    for (auto& m : v.include) EXPECT_EQ(m[0], 1);  // negative in every view
}

TEST(SizeBuckets, SingleLargeObjectsAllLandInLarge) {
    std::vector<SampleRecord> s;
    for (std::size_t i = 0; i < 10; ++i) s.push_back(one_box_sample(i, 4, {{0, 0, 25, 25, static_cast<std::uint32_t>(i % 4)}}));
    const auto v = size_bucket_eval_split(s, 4, SizeThresholds{});
    EXPECT_EQ(v.positive_pairs[2], 10u);
    EXPECT_EQ(v.positive_pairs[0] + v.positive_pairs[1], 0u);
}

TEST(SizeBuckets, PositivePairsArePartitioned) {
    const auto cfg = small_config(300, 0);
    const auto samples = generate_split(cfg, kTrainSplit, cfg.n_train);
    const auto v = size_bucket_eval_split(samples, cfg.num_classes, cfg.thresholds);
    std::size_t total = 0;
    for (const auto& s : samples) total += static_cast<std::size_t>(std::accumulate(s.labels.begin(), s.labels.end(), 0));
    EXPECT_EQ(v.positive_pairs[0] + v.positive_pairs[1] + v.positive_pairs[2], total);
    EXPECT_EQ(v.total_positive_pairs, total);
    for (std::size_t i = 0; i < samples.size() * cfg.num_classes; ++i) {
        const int in = v.include[0][i] + v.include[1][i] + v.include[2][i];
        EXPECT_EQ(in, samples[i / cfg.num_classes].labels[i % cfg.num_classes] ? 1 : 3);
    }
}

TEST(SizeBuckets, MissingBoxesAreAnError) {
    auto s = one_box_sample(0, 3, {});
    s.labels[1] = 1;
    std::vector<SampleRecord> v{s};
    EXPECT_THROW(size_bucket_eval_split(v, 3, SizeThresholds{}), DatasetError);
}
