#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"

using namespace edloc;
using edloc::support::TempDir;

namespace {

TokenLayout small_layout() {
  TokenLayout l;
  l.n_txt = 10;
  l.n_img = 16;
  l.grid_h = 4;
  l.grid_w = 4;
  l.d = 8;
  l.n_layers = 2;
  l.n_timesteps = 3;
  return l;
}

Manifest small_manifest() {
  Manifest m;
  m.layout = small_layout();
  m.schedule.sigma = {1.0f, 0.5f, 0.0f};
  m.instruction.task = Task::removal;
  m.instruction.selected_text_indices = {2, 3};
  m.instruction.label = "remove the cup";
  return m;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Manifest, EchoesGeometryKeys) {
  auto text = format_manifest(small_manifest());
  for (const char* line : {"n_txt = 10", "n_img = 16", "grid_h = 4", "grid_w = 4", "d = 8"})
    EXPECT_NE(text.find(line), std::string::npos) << line;
  EXPECT_EQ(parse_manifest(text), small_manifest());
}

TEST(Manifest, GridMismatchNamed) {
  Manifest m = small_manifest();
  m.layout.grid_h = 3;
  m.layout.grid_w = 5;
  auto msg = error_of([&] { format_manifest(m); });
  EXPECT_NE(msg.find("grid mismatch"), std::string::npos) << msg;
}

TEST(Manifest, MonotoneScheduleSerializedInOrder) {
  auto text = format_manifest(small_manifest());
  EXPECT_NE(text.find("sigma = 1,0.5,0"), std::string::npos) << text;
}

TEST(Manifest, RejectsIncreasingSchedule) {
  Manifest m = small_manifest();
  m.schedule.sigma = {0.5f, 1.0f, 0.0f};
  EXPECT_NE(error_of([&] { m.validate(); }).find("sigma"), std::string::npos);
}

TEST(Manifest, ByteDeterministic) {
  TempDir a("edloc_manifest_a"), b("edloc_manifest_b");
  write_manifest(small_manifest(), a.path());
  write_manifest(small_manifest(), b.path());
  EXPECT_EQ(support::file_bytes(a / "manifest.txt"), support::file_bytes(b / "manifest.txt"));
}

TEST(Manifest, InstructionIndicesChecked) {
  Manifest m = small_manifest();
  m.instruction.selected_text_indices = {3, 3};
  EXPECT_THROW(m.validate(), Error);
  m.instruction.selected_text_indices = {};
  EXPECT_THROW(m.validate(), Error);
  m.instruction.selected_text_indices = {10};
  EXPECT_THROW(m.validate(), Error);
}

TEST(Manifest, MissingKeyNamed) {
  auto text = format_manifest(small_manifest());
  auto pos = text.find("d = 8\n");
  text.erase(pos, 6);
  auto msg = error_of([&] { parse_manifest(text); });
  EXPECT_NE(msg.find("field d"), std::string::npos) << msg;
}

TEST(Bundle, TwoByTwoRoundTrip) {
  FeatureBundle f{1, 2, Stream::source, Matrix(2, 2, std::vector<float>{0, 1, 0.5f, 0.5f})};
  auto bytes = encode_record(f);
  EXPECT_EQ(bytes.size(), kRecordHeaderSize + 16);
  EXPECT_EQ(std::get<FeatureBundle>(decode_record(bytes)), f);

  AttentionBundle a{0, 0, Stream::target, f.f, Matrix::identity(2)};
  EXPECT_EQ(std::get<AttentionBundle>(decode_record(encode_record(a))), a);
}

TEST(Bundle, HeaderLayout) {
  FeatureBundle f{3, 7, Stream::source, Matrix(2, 2, 0.25f)};
  auto b = encode_record(f);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 8), std::string("EDLOC1\0\0", 8));
  EXPECT_EQ(b[8], 1);
  EXPECT_EQ(b[9], static_cast<std::uint8_t>(RecordKind::feature));
  EXPECT_EQ(b[10], 3);
  EXPECT_EQ(b[14], 7);
  EXPECT_EQ(b[18], 1);
  // 0.25f little-endian
  EXPECT_EQ(b[30], 0x00);
  EXPECT_EQ(b[33], 0x3e);
}

TEST(Bundle, NonFiniteRejectedWithPosition) {
  FeatureBundle f{0, 0, Stream::target, Matrix(2, 3, 0.0f)};
  f.f(1, 2) = std::numeric_limits<float>::quiet_NaN();
  auto msg = error_of([&] { encode_record(f); });
  EXPECT_NE(msg.find("non-finite value at (1, 2)"), std::string::npos) << msg;
}

TEST(Bundle, RowSumViolation) {
  AttentionBundle a{0, 0, Stream::target, Matrix(2, 2, std::vector<float>{0.6f, 0.6f, 0, 0}),
                    Matrix::identity(2)};
  auto msg = error_of([&] { encode_record(a); });
  EXPECT_NE(msg.find("row-sum violation"), std::string::npos) << msg;
}

TEST(Bundle, RowSumToleranceAdmitsRounding) {
  AttentionBundle a{0, 0, Stream::target,
                    Matrix(1, 2, std::vector<float>{0.50004f, 0.50004f}), Matrix::identity(1)};
  EXPECT_NO_THROW(encode_record(a));
}

TEST(Bundle, BadMagic) {
  FeatureBundle f{0, 0, Stream::target, Matrix(2, 2, 1.0f)};
  auto bytes = encode_record(f);
  bytes[0] = bytes[1] = bytes[2] = bytes[3] = 'X';
  auto msg = error_of([&] { decode_record(bytes); });
  EXPECT_NE(msg.find("unrecognized format"), std::string::npos) << msg;
}

TEST(Bundle, TruncatedPayload) {
  FeatureBundle f{0, 0, Stream::target, Matrix(2, 2, 1.0f)};
  auto bytes = encode_record(f);
  bytes.resize(bytes.size() - 4);
  auto msg = error_of([&] { decode_record(bytes); });
  EXPECT_NE(msg.find("truncated payload, expected 46 bytes"), std::string::npos) << msg;
}

TEST(Bundle, VersionMismatch) {
  FeatureBundle f{0, 0, Stream::target, Matrix(2, 2, 1.0f)};
  auto bytes = encode_record(f);
  bytes[8] = 2;
  EXPECT_NE(error_of([&] { decode_record(bytes); }).find("version mismatch"),
            std::string::npos);
}

TEST(Bundle, LayoutShapeEnforced) {
  FeatureBundle f{0, 0, Stream::target, Matrix(16, 7, 0.0f)};
  TokenLayout l = small_layout();
  EXPECT_NE(error_of([&] { encode_record(f, &l); }).find("shape mismatch"), std::string::npos);
}

TEST(Bundle, LatentAndMaskRoundTrip) {
  Xoshiro256ss rng(5);
  LatentRecord cur{LatentRole::current, 4, support::random_gaussian(rng, 16, 8)};
  EXPECT_EQ(std::get<LatentRecord>(decode_record(encode_record(cur))), cur);
  LatentRecord init{LatentRole::initial_noise, std::nullopt, cur.z};
  EXPECT_EQ(std::get<LatentRecord>(decode_record(encode_record(init))), init);

  EditMask m = support::random_mask(rng, 16, 0.4, MaskStage::postprocessed);
  m.stream = Stream::combined;
  m.layer = 3;
  m.timestep = 1;
  EditMask back = std::get<EditMask>(decode_record(encode_record(m)));
  EXPECT_TRUE(back.same_bits(m));
  EXPECT_EQ(back.stage, m.stage);
  EXPECT_EQ(back.layer, m.layer);
  EXPECT_EQ(back.timestep, m.timestep);
  EXPECT_EQ(back.stream, m.stream);
}

TEST(Bundle, RandomRoundTripBitExact) {
  Xoshiro256ss rng(11);
  for (int i = 0; i < 200; ++i) {
    auto a = support::random_bundle(rng, 1 + rng.below(20), 1 + rng.below(6),
                                    static_cast<std::uint32_t>(rng.below(50)),
                                    static_cast<std::uint32_t>(rng.below(28)),
                                    rng.below(2) ? Stream::source : Stream::target);
    auto bytes = encode_record(a);
    EXPECT_EQ(std::get<AttentionBundle>(decode_record(bytes)), a);
    EXPECT_EQ(encode_record(decode_record(bytes)), bytes);
  }
}

TEST(Filenames, IdentityParsesBack) {
  AttentionBundle a{5, 12, Stream::source, Matrix(1, 1, 0.5f), Matrix(1, 1, 0.5f)};
  auto id = identity_from_filename(record_filename(a));
  ASSERT_TRUE(id);
  EXPECT_EQ(*id, detail::identity_of(a));
  EditMask m = EditMask::from_bits({1, 0}, MaskStage::feature, Stream::target);
  m.layer = 7;
  m.timestep = 3;
  EXPECT_EQ(mask_filename(m), "mask_feat_tgt_L7_T3.edloc");
  EXPECT_EQ(*identity_from_filename(mask_filename(m)), detail::identity_of(m));
  EXPECT_EQ(latent_filename(LatentRole::blended, 5), "latent_blend_T5.edloc");
  EXPECT_FALSE(identity_from_filename("notes.txt"));
  EXPECT_FALSE(identity_from_filename("attn_L1_T2_comb.edloc"));
}

// Any single header byte change is detected or decodes to the same record.
TEST(Bundle, SingleHeaderByteFuzz) {
  Xoshiro256ss rng(17);
  std::vector<Record> records = {
      support::random_bundle(rng, 16, 10, 1, 2, Stream::source),
      FeatureBundle{3, 1, Stream::target, support::random_gaussian(rng, 16, 8)},
      LatentRecord{LatentRole::current, 2, support::random_gaussian(rng, 16, 8)},
      LatentRecord{LatentRole::source, std::nullopt, support::random_gaussian(rng, 16, 8)},
  };
  EditMask m = support::random_mask(rng, 16, 0.5, MaskStage::postprocessed);
  m.timestep = 2;
  m.layer = 1;
  records.push_back(m);
  const TokenLayout layout = small_layout();
  std::size_t detected = 0, identical = 0;
  for (const auto& r : records) {
    const auto clean = encode_record(r, &layout);
    const auto expected = identity_from_filename(record_filename(r));
    ASSERT_TRUE(expected);
    for (std::size_t pos = 0; pos < kRecordHeaderSize; ++pos)
      for (int v = 0; v < 256; ++v) {
        if (v == clean[pos]) continue;
        auto bytes = clean;
        bytes[pos] = static_cast<std::uint8_t>(v);
        try {
          Record back = decode_record(bytes, expected, &layout);
          EXPECT_EQ(encode_record(back, &layout), clean) << "byte " << pos << " value " << v;
          ++identical;
        } catch (const Error&) {
          ++detected;
        }
      }
  }
  EXPECT_GT(detected, 0u);
  EXPECT_EQ(identical, 0u);
}

TEST(Store, MissingRecordNamed) {
  TempDir dir("edloc_store");
  Manifest m = small_manifest();
  write_manifest(m, dir.path());
  RecordStore store(dir.path());
  try {
    store.attention(Stream::target, 1, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_record);
    EXPECT_NE(std::string(e.what()).find("attn_L1_T2_tgt.edloc"), std::string::npos);
  }
}

TEST(Store, ValidateReportsMissingAndCorrupt) {
  SceneParams p;
  p.n_layers = 2;
  p.n_timesteps = 2;
  TempDir dir("edloc_validate");
  SyntheticScene(p).write(dir.path());
  EXPECT_TRUE(validate_store(dir.path()).ok());

  std::filesystem::remove(dir / "feat_L1_T0_src.edloc");
  auto rep = validate_store(dir.path());
  EXPECT_TRUE(rep.missing);

  auto bytes = support::file_bytes(dir / "attn_L0_T1_tgt.edloc");
  bytes[14] = 0;  // timestep field
  std::ofstream(dir / "attn_L0_T1_tgt.edloc", std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  rep = validate_store(dir.path());
  auto it = std::find_if(rep.entries.begin(), rep.entries.end(),
                         [](const ValidationEntry& e) { return e.file == "attn_L0_T1_tgt.edloc"; });
  ASSERT_NE(it, rep.entries.end());
  EXPECT_FALSE(it->ok);
  EXPECT_NE(it->message.find("header field timestep"), std::string::npos) << it->message;
}
