#include "vaal/service/journal.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vaal;
using namespace vaal::service;

namespace {

// Bitwise reflected CRC-32 (poly 0xEDB88320), independent of zlib.
std::uint32_t crc32_bitwise(const std::string& s) {
    std::uint32_t crc = 0xFFFFFFFFu;
    for (unsigned char c : s) {
        crc ^= c;
        for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
    }
    return ~crc;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
}

std::string fresh(const char* name) {
    const auto dir = test_util::temp_dir(name);
    return (dir / "journal.vaal").string();
}

}  // namespace

TEST(Crc32, CheckValue) {
    EXPECT_EQ(crc32_bitwise("123456789"), 0xCBF43926u);
    EXPECT_EQ(crc32_of("123456789"), 0xCBF43926u);
    for (const std::string s : {"", "a", R"({"seq":1,"type":"label"})"}) EXPECT_EQ(crc32_of(s), crc32_bitwise(s));
}

TEST(Journal, HeaderAndAppend) {
    const auto path = fresh("journal_header");
    {
        auto [j, log] = Journal::open(path);
        EXPECT_TRUE(log.records.empty());
        EXPECT_EQ(j.append({{"type", "a"}}), 1u);
        EXPECT_EQ(j.append({{"type", "b"}}), 2u);
    }
    const std::string bytes = slurp(path);
    EXPECT_EQ(bytes.substr(0, 12), std::string("VAALJRNL\x01\x00\x00\x00", 12));
    // first frame: length, crc, payload
    std::size_t pos = 12;
    const auto len = detail::get_u32(bytes, pos);
    const auto crc = detail::get_u32(bytes, pos);
    const std::string payload = bytes.substr(pos, len);
    EXPECT_EQ(payload, R"({"seq":1,"type":"a"})");
    EXPECT_EQ(crc, crc32_bitwise(payload));
}

TEST(Journal, ReplayReturnsRecordsInOrder) {
    const auto path = fresh("journal_replay");
    {
        auto [j, log] = Journal::open(path);
        for (int k = 0; k < 5; ++k) j.append({{"k", k}});
    }
    auto [j, log] = Journal::open(path);
    ASSERT_EQ(log.records.size(), 5u);
    for (int k = 0; k < 5; ++k) {
        EXPECT_EQ(log.records[static_cast<std::size_t>(k)]["k"], k);
        EXPECT_EQ(log.records[static_cast<std::size_t>(k)]["seq"], k + 1);
    }
    EXPECT_EQ(log.dropped_bytes, 0u);
    EXPECT_EQ(j.append({{"k", 5}}), 6u);
}

TEST(Journal, TornTailIsCutOff) {
    const auto path = fresh("journal_torn");
    {
        auto [j, log] = Journal::open(path);
        for (int k = 0; k < 3; ++k) j.append({{"k", k}});
    }
    const std::string full = slurp(path);
    for (std::size_t cut : {1u, 5u, 9u, 15u}) {
        spit(path, full.substr(0, full.size() - cut));
        auto [j, log] = Journal::open(path);
        EXPECT_EQ(log.records.size(), 2u) << "cut " << cut;
        EXPECT_GT(log.dropped_bytes, 0u);
        EXPECT_EQ(std::filesystem::file_size(path), log.valid_bytes);
        EXPECT_EQ(j.append({{"k", 9}}), 3u);
        auto reread = Journal::parse(slurp(path));
        ASSERT_EQ(reread.records.size(), 3u);
        EXPECT_EQ(reread.records[2]["k"], 9);
    }
}

TEST(Journal, ChecksumMismatchAtTail) {
    const auto path = fresh("journal_crc");
    {
        auto [j, log] = Journal::open(path);
        j.append({{"k", 0}});
        j.append({{"k", 1}});
    }
    std::string bytes = slurp(path);
    bytes[bytes.size() - 3] ^= 0x20;
    spit(path, bytes);
    auto [j, log] = Journal::open(path);
    EXPECT_EQ(log.records.size(), 1u);
}

TEST(Journal, RejectsForeignOrInconsistentFiles) {
    const auto path = fresh("journal_bad");
    spit(path, "NOTAJRNL\x01\x00\x00\x00");
    EXPECT_THROW(Journal::open(path), IoError);
    spit(path, std::string("VAALJRNL\x02\x00\x00\x00", 12));
    EXPECT_THROW(Journal::open(path), IoError);

    // a record whose seq skips ahead
    std::string bytes("VAALJRNL\x01\x00\x00\x00", 12);
    const std::string payload = R"({"seq":2})";
    detail::put_u32(bytes, static_cast<std::uint32_t>(payload.size()));
    detail::put_u32(bytes, crc32_bitwise(payload));
    bytes += payload;
    EXPECT_THROW(Journal::parse(bytes), IoError);
}
