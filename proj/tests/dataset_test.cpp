// SPDX-License-Identifier: Apache-2.0
#include "kdnas/dataset.hpp"

#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "kdnas/error.hpp"
#include "test_util.hpp"

using namespace kdnas;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

}  // namespace

TEST(SyntheticImages, ShapeBalanceAndDeterminism) {
  SyntheticImageConfig cfg;
  cfg.num_classes = 4;
  cfg.per_class = 5;
  cfg.shape = {3, 8, 8};
  cfg.seed = 2;
  const auto a = make_synthetic_images(cfg);
  const auto b = make_synthetic_images(cfg);
  a.validate();
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_EQ(a.images.shape(), (std::vector<int>{20, 3, 8, 8}));
  std::vector<int> counts(4, 0);
  for (int y : a.labels) ++counts[y];
  EXPECT_EQ(counts, (std::vector<int>{5, 5, 5, 5}));
  cfg.seed = 3;
  EXPECT_NE(make_synthetic_images(cfg).images, a.images);
}

TEST(SelectClasses, RelabelsInGivenOrder) {
  SyntheticImageConfig cfg;
  cfg.num_classes = 5;
  cfg.per_class = 3;
  cfg.shape = {1, 4, 4};
  const auto d = make_synthetic_images(cfg);
  const auto s = select_classes(d, {3, 1});
  EXPECT_EQ(s.num_classes, 2);
  EXPECT_EQ(s.size(), 6u);
  EXPECT_EQ(s.class_names, (std::vector<std::string>{"class003", "class001"}));
  std::size_t j = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] != 3 && d.labels[i] != 1) continue;
    EXPECT_EQ(s.labels[j], d.labels[i] == 3 ? 0 : 1);
    for (std::size_t p = 0; p < 16; ++p) EXPECT_EQ(s.images[j * 16 + p], d.images[i * 16 + p]);
    ++j;
  }
  EXPECT_THROW(select_classes(d, {1, 1}), ValidationError);
  EXPECT_THROW(select_classes(d, {7}), ValidationError);
}

TEST(SplitTrainVal, StratifiedAndDisjoint) {
  SyntheticImageConfig cfg;
  cfg.num_classes = 3;
  cfg.per_class = 20;
  cfg.shape = {1, 2, 2};
  auto d = make_synthetic_images(cfg);
  // Tag every image so membership can be traced.
  for (std::size_t i = 0; i < d.size(); ++i) d.images[i * 4] = static_cast<double>(i);
  const auto s = split_train_val(d, 0.1, 4);
  EXPECT_EQ(s.train.size(), 54u);
  EXPECT_EQ(s.val.size(), 6u);
  std::vector<int> val_counts(3, 0);
  for (int y : s.val.labels) ++val_counts[y];
  EXPECT_EQ(val_counts, (std::vector<int>{2, 2, 2}));
  std::set<double> seen;
  for (const auto* part : {&s.train, &s.val}) {
    for (std::size_t i = 0; i < part->size(); ++i) EXPECT_TRUE(seen.insert(part->images[i * 4]).second);
  }
  EXPECT_EQ(seen.size(), 60u);
  EXPECT_EQ(split_train_val(d, 0.1, 4).val.images, s.val.images);
  EXPECT_THROW(split_train_val(d, 1.0, 0), ValidationError);
}

TEST(ImageFolder, ReadsNetpbmVariants) {
  const auto root = kdnas::testing::temp_dir("images") / "toy";
  // 2x1 images: binary grey, ASCII grey, binary colour (16-bit)
  write_bytes(root / "cat" / "a.pgm", std::string("P5\n# comment\n2 1\n255\n") + '\x00' + '\xff');
  write_bytes(root / "cat" / "b.pgm", "P2 2 1 10\n5 10\n");
  std::string ppm = "P6 2 1 65535\n";
  for (int v : {0, 65535, 0, 65535, 65535, 0}) {
    ppm += static_cast<char>(v >> 8);
    ppm += static_cast<char>(v & 0xff);
  }
  write_bytes(root / "dog" / "c.ppm", ppm);
  write_bytes(root / "dog" / "notes.txt", "ignored");
  const auto d = load_image_folder(root);
  d.validate();
  EXPECT_EQ(d.num_classes, 2);
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"cat", "dog"}));
  EXPECT_EQ(d.labels, (std::vector<int>{0, 0, 1}));
  ASSERT_EQ(d.images.shape(), (std::vector<int>{3, 3, 1, 2}));
  // image a replicated over channels
  EXPECT_DOUBLE_EQ(d.images[0], -0.5);
  EXPECT_DOUBLE_EQ(d.images[1], 0.5);
  EXPECT_DOUBLE_EQ(d.images[4], -0.5);
  EXPECT_DOUBLE_EQ(d.images[6], 0.0);  // 5/10
  // image c: channel-major
  EXPECT_DOUBLE_EQ(d.images[12], -0.5);
  EXPECT_DOUBLE_EQ(d.images[13], 0.5);
  EXPECT_DOUBLE_EQ(d.images[14], 0.5);
  EXPECT_DOUBLE_EQ(d.images[15], 0.5);
  EXPECT_DOUBLE_EQ(d.images[16], -0.5);
  EXPECT_DOUBLE_EQ(d.images[17], -0.5);
}

TEST(ImageFolder, RejectsBadInput) {
  const auto root = kdnas::testing::temp_dir("bad_images");
  EXPECT_THROW(load_image_folder(root / "missing"), IoError);
  EXPECT_THROW(load_image_folder(root), ValidationError);
  write_bytes(root / "x" / "a.pgm", "P5 2 2 255\nab");
  EXPECT_THROW(load_image_folder(root), DecodeError);
  write_bytes(root / "x" / "a.pgm", "P7 2 2 255\n");
  EXPECT_THROW(load_image_folder(root), DecodeError);
  write_bytes(root / "x" / "a.pgm", "P2 1 1 3\n2\n");
  write_bytes(root / "y" / "b.pgm", "P2 2 1 3\n2 2\n");
  EXPECT_THROW(load_image_folder(root), ValidationError);
}
