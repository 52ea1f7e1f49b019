#include <cstring>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "elastopnp/io.hpp"
#include "oracles.hpp"

using namespace elastopnp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
    const fs::path dir = fs::temp_directory_path() / "elastopnp_test_io";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST(GridFile, LayoutIsExact) {
    GridFile g;
    g.rows = 2;
    g.cols = 3;
    g.values = {1, 2, 3, 4, 5, 6};
    const auto bytes = encode_grid(g);
    ASSERT_EQ(bytes.size(), 8u + 12 + 48 + 4);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "EPNPGRD1");
    std::uint32_t hdr[3];
    std::memcpy(hdr, bytes.data() + 8, 12);
    EXPECT_EQ(hdr[0], 2u);
    EXPECT_EQ(hdr[1], 3u);
    EXPECT_EQ(hdr[2], 1u);
    double v5;
    std::memcpy(&v5, bytes.data() + 20 + 5 * 8, 8);
    EXPECT_EQ(v5, 6.0);
    std::uint32_t crc;
    std::memcpy(&crc, bytes.data() + bytes.size() - 4, 4);
    EXPECT_EQ(crc, crc32_of(bytes, bytes.size() - 4));
}

TEST(GridFile, RoundTripIsBitExact) {
    std::mt19937_64 rng(1);
    GridFile g;
    g.rows = 17;
    g.cols = 5;
    g.channels = 3;
    const Vector v = oracle::random_vector(17 * 5 * 3, rng);
    g.values.assign(v.data(), v.data() + v.size());
    g.values[7] = -0.0;
    g.values[8] = std::numeric_limits<double>::denorm_min();
    const fs::path p = scratch("rt.grd");
    write_grid(p, g);
    const GridFile back = read_grid(p);
    EXPECT_EQ(back.rows, g.rows);
    EXPECT_EQ(back.cols, g.cols);
    EXPECT_EQ(back.channels, g.channels);
    ASSERT_EQ(back.values.size(), g.values.size());
    EXPECT_EQ(std::memcmp(back.values.data(), g.values.data(), g.values.size() * 8), 0);
    EXPECT_EQ(encode_grid(back), read_file(p));
}

TEST(GridFile, ChannelsAreInterleaved) {
    GridFile g;
    g.rows = 1;
    g.cols = 2;
    g.channels = 2;
    g.values = {1, 10, 2, 20};
    Grid c1 = g.channel(1);
    EXPECT_EQ(c1(0, 0), 10.0);
    EXPECT_EQ(c1(0, 1), 20.0);
    EXPECT_THROW(g.channel(2), InvalidArgument);
    Grid img(2, 2);
    img << 1, 2, 3, 4;
    EXPECT_EQ((GridFile::from_grid(img).channel(0) - img).norm(), 0.0);
}

TEST(GridFile, CorruptionIsDetected) {
    GridFile g;
    g.rows = 3;
    g.cols = 3;
    g.values.assign(9, 1.5);
    const auto good = encode_grid(g);

    auto flipped = good;
    flipped[30] ^= 0x01;
    EXPECT_THROW(decode_grid(flipped), IoError);

    auto magic = good;
    magic[3] = 'X';
    EXPECT_THROW(decode_grid(magic), IoError);

    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{19}, good.size() - 1}) {
        std::vector<std::uint8_t> trunc(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_THROW(decode_grid(trunc), IoError) << cut;
    }
    auto longer = good;
    longer.push_back(0);
    EXPECT_THROW(decode_grid(longer), IoError);

    g.values.pop_back();
    EXPECT_THROW(encode_grid(g), InvalidArgument);
}

TEST(Files, MissingFileIsIoError) {
    EXPECT_THROW(read_file(scratch("does_not_exist.grd")), IoError);
    EXPECT_THROW(write_text_atomic("/proc/elastopnp_nope/x.txt", "x"), IoError);
}

TEST(Crc32, KnownVector) {
    const std::string s = "123456789";
    const std::vector<std::uint8_t> b(s.begin(), s.end());
    EXPECT_EQ(crc32_of(b, b.size()), 0xCBF43926u);
}
