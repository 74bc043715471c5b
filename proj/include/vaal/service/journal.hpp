#pragma once

// Append-only label journal.
//
//   header:  "VAALJRNL" u32 version
//   record:  u32 payload length, u32 crc32(payload), payload (JSON, UTF-8)
//
// Every payload carries a "seq" field, 1-based and gap-free. A record is
// durable once append() returns: it is written and fsync'd before the caller
// acknowledges anything. On open, a truncated or checksum-failing record at
// the tail is treated as a torn write and cut off.

#include "vaal/error.hpp"

#include <json.hpp>
#include <zlib.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <fcntl.h>
#include <string>
#include <sys/stat.h>
#include <unistd.h>
#include <vector>

namespace vaal::service {

inline constexpr char kJournalMagic[8] = {'V', 'A', 'A', 'L', 'J', 'R', 'N', 'L'};
inline constexpr std::uint32_t kJournalVersion = 1;
inline constexpr std::size_t kJournalHeaderSize = 12;
inline constexpr std::uint32_t kMaxRecordBytes = 64u << 20;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(k)])) << (8 * k);
    pos += 4;
    return v;
}

}  // namespace detail

inline std::uint32_t crc32_of(const std::string& bytes) {
    return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

struct ReplayLog {
    std::vector<nlohmann::json> records;
    std::size_t valid_bytes = 0;    // header + intact records
    std::size_t dropped_bytes = 0;  // torn tail removed on open
};

class Journal {
public:
    Journal() = default;
    Journal(const Journal&) = delete;
    Journal& operator=(const Journal&) = delete;
    Journal(Journal&& o) noexcept : fd_(o.fd_), next_seq_(o.next_seq_), path_(std::move(o.path_)) { o.fd_ = -1; }
    Journal& operator=(Journal&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = o.fd_;
            next_seq_ = o.next_seq_;
            path_ = std::move(o.path_);
            o.fd_ = -1;
        }
        return *this;
    }
    ~Journal() { close(); }

    /// Opens (creating if absent) and returns the intact records for replay.
    static std::pair<Journal, ReplayLog> open(const std::string& path) {
        Journal j;
        j.path_ = path;
        j.fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (j.fd_ < 0) throw IoError("journal: cannot open " + path + ": " + std::strerror(errno));

        const std::string bytes = j.read_all();
        ReplayLog log;
        if (bytes.empty()) {
            std::string header(kJournalMagic, 8);
            detail::put_u32(header, kJournalVersion);
            j.write_fully(header);
            j.sync();
            sync_parent_dir(path);
            log.valid_bytes = kJournalHeaderSize;
        } else {
            log = parse(bytes, path);
            if (log.dropped_bytes > 0) {
                if (::ftruncate(j.fd_, static_cast<off_t>(log.valid_bytes)) != 0)
                    throw IoError("journal: cannot truncate torn tail of " + path);
                j.sync();
            }
        }
        if (::lseek(j.fd_, 0, SEEK_END) < 0) throw IoError("journal: seek failed on " + path);
        j.next_seq_ = log.records.size() + 1;
        return {std::move(j), std::move(log)};
    }

    /// Parses a journal image. Records after the first damaged one are dropped.
    static ReplayLog parse(const std::string& bytes, const std::string& name = "journal") {
        if (bytes.size() < kJournalHeaderSize || std::memcmp(bytes.data(), kJournalMagic, 8) != 0)
            throw IoError(name + ": not a journal file");
        std::size_t pos = 8;
        const auto version = detail::get_u32(bytes, pos);
        if (version != kJournalVersion) throw IoError(name + ": unsupported journal version " + std::to_string(version));

        ReplayLog log;
        log.valid_bytes = pos;
        while (pos + 8 <= bytes.size()) {
            std::size_t p = pos;
            const auto len = detail::get_u32(bytes, p);
            const auto crc = detail::get_u32(bytes, p);
            if (len > kMaxRecordBytes || p + len > bytes.size()) break;
            const std::string payload = bytes.substr(p, len);
            if (crc32_of(payload) != crc) break;
            nlohmann::json rec;
            try {
                rec = nlohmann::json::parse(payload);
            } catch (const nlohmann::json::exception&) {
                break;
            }
            if (!rec.contains("seq") || rec["seq"].get<std::uint64_t>() != log.records.size() + 1)
                throw IoError(name + ": sequence gap at record " + std::to_string(log.records.size() + 1));
            log.records.push_back(std::move(rec));
            pos = p + len;
            log.valid_bytes = pos;
        }
        log.dropped_bytes = bytes.size() - log.valid_bytes;
        return log;
    }

    /// Stamps `seq`, writes and fsyncs. Returns the sequence number.
    std::uint64_t append(nlohmann::json record) {
        if (fd_ < 0) throw IoError("journal: not open");
        const std::uint64_t seq = next_seq_;
        record["seq"] = seq;
        const std::string payload = record.dump();
        std::string frame;
        frame.reserve(payload.size() + 8);
        detail::put_u32(frame, static_cast<std::uint32_t>(payload.size()));
        detail::put_u32(frame, crc32_of(payload));
        frame += payload;
        const off_t start = ::lseek(fd_, 0, SEEK_END);
        try {
            write_fully(frame);
            sync();
        } catch (...) {
            // leave no half-written frame behind for the next append
            if (start >= 0 && ::ftruncate(fd_, start) == 0) ::lseek(fd_, 0, SEEK_END);
            throw;
        }
        ++next_seq_;
        return seq;
    }

    std::uint64_t next_seq() const { return next_seq_; }
    const std::string& path() const { return path_; }

private:
    int fd_ = -1;
    std::uint64_t next_seq_ = 1;
    std::string path_;

    void close() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    std::string read_all() {
        std::string out;
        if (::lseek(fd_, 0, SEEK_SET) < 0) throw IoError("journal: seek failed on " + path_);
        char buf[1 << 16];
        for (;;) {
            const ssize_t n = ::read(fd_, buf, sizeof buf);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError("journal: read failed on " + path_);
            }
            if (n == 0) break;
            out.append(buf, static_cast<std::size_t>(n));
        }
        return out;
    }

    void write_fully(const std::string& data) {
        std::size_t done = 0;
        while (done < data.size()) {
            const ssize_t n = ::write(fd_, data.data() + done, data.size() - done);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError("journal: write failed on " + path_ + ": " + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
    }

    void sync() {
        if (::fsync(fd_) != 0) throw IoError("journal: fsync failed on " + path_);
    }

    static void sync_parent_dir(const std::string& path) {
        const auto slash = path.find_last_of('/');
        const std::string dir = slash == std::string::npos ? "." : path.substr(0, slash == 0 ? 1 : slash);
        const int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
        if (dfd >= 0) {
            ::fsync(dfd);
            ::close(dfd);
        }
    }
};

}  // namespace vaal::service
