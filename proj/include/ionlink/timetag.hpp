#pragma once

// The .qtt time-tag container: a fixed little-endian layout carrying one
// acquisition's trigger and detector events.
//
//   offset  size  field
//   0       4     magic "QTT1"
//   4       2     format version (u16le, currently 1)
//   6       2     channel count K (u16le)
//   8       2*K   channel map entries: {u8 channel id, u8 role}
//   8+2K    32    config digest (SHA-256 of the generating config; zero if none)
//   40+2K   8     record count (u64le)
//   48+2K   12*N  records: {u64le timestamp_ps, u8 channel, u8 flags, u16le reserved=0}
//
// Timestamps are absolute picoseconds since acquisition start and must be
// non-decreasing. Trigger events are ordinary records on their own channel.
// Flags: bit 0 is the overflow marker, all other bits reserved zero.

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ionlink::qtt {

constexpr std::array<uint8_t, 4> kMagic = {'Q', 'T', 'T', '1'};
constexpr uint16_t kVersion = 1;
constexpr size_t kRecordSize = 12;

enum class ChannelRole : uint8_t { trigger = 0, pmt = 1, apd = 2, snspd = 3 };

inline const char* role_name(ChannelRole role) {
    switch (role) {
        case ChannelRole::trigger: return "trigger";
        case ChannelRole::pmt: return "pmt";
        case ChannelRole::apd: return "apd";
        case ChannelRole::snspd: return "snspd";
    }
    return "?";
}

inline ChannelRole role_from_name(const std::string& name) {
    if (name == "trigger") return ChannelRole::trigger;
    if (name == "pmt") return ChannelRole::pmt;
    if (name == "apd") return ChannelRole::apd;
    if (name == "snspd") return ChannelRole::snspd;
    throw std::invalid_argument("unknown channel role '" + name + "'");
}

struct TimeTagRecord {
    uint64_t timestamp_ps = 0;
    uint8_t channel = 0;
    uint8_t flags = 0;

    friend bool operator==(const TimeTagRecord&, const TimeTagRecord&) = default;
};

struct ChannelInfo {
    uint8_t id = 0;
    ChannelRole role = ChannelRole::trigger;

    friend bool operator==(const ChannelInfo&, const ChannelInfo&) = default;
};

struct StreamHeader {
    uint16_t version = kVersion;
    std::vector<ChannelInfo> channels;
    std::array<uint8_t, 32> config_digest{};
    uint64_t record_count = 0;

    size_t byte_size() const { return 48 + 2 * channels.size(); }

    bool has_channel(uint8_t id) const {
        for (const auto& c : channels)
            if (c.id == id) return true;
        return false;
    }
};

enum class ParseCode {
    io_error,
    truncated_header,
    bad_magic,
    bad_version,
    bad_channel_map,
    truncated_record,
    bad_reserved_bytes,
    bad_flags,
    unmapped_channel,
    non_monotone_timestamp,
    count_mismatch,
    trailing_data,
    unsorted_input,     // writer-side
    unmapped_input,     // writer-side
};

inline const char* parse_code_name(ParseCode code) {
    switch (code) {
        case ParseCode::io_error: return "io_error";
        case ParseCode::truncated_header: return "truncated_header";
        case ParseCode::bad_magic: return "bad_magic";
        case ParseCode::bad_version: return "bad_version";
        case ParseCode::bad_channel_map: return "bad_channel_map";
        case ParseCode::truncated_record: return "truncated_record";
        case ParseCode::bad_reserved_bytes: return "bad_reserved_bytes";
        case ParseCode::bad_flags: return "bad_flags";
        case ParseCode::unmapped_channel: return "unmapped_channel";
        case ParseCode::non_monotone_timestamp: return "non_monotone_timestamp";
        case ParseCode::count_mismatch: return "count_mismatch";
        case ParseCode::trailing_data: return "trailing_data";
        case ParseCode::unsorted_input: return "unsorted_input";
        case ParseCode::unmapped_input: return "unmapped_input";
    }
    return "?";
}

// Every failure carries the byte offset it was detected at plus a reason
// code, so corrupt files can be diagnosed without a hex editor.
class ParseError : public std::runtime_error {
public:
    ParseError(ParseCode code, uint64_t byte_offset, const std::string& detail)
        : std::runtime_error(std::string(parse_code_name(code)) + " at byte " +
                             std::to_string(byte_offset) + ": " + detail),
          code_(code), byte_offset_(byte_offset) {}

    ParseCode code() const { return code_; }
    uint64_t byte_offset() const { return byte_offset_; }

private:
    ParseCode code_;
    uint64_t byte_offset_;
};

namespace detail {

inline void put_u16(uint8_t* p, uint16_t v) {
    p[0] = static_cast<uint8_t>(v);
    p[1] = static_cast<uint8_t>(v >> 8);
}

inline void put_u64(uint8_t* p, uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
}

inline uint16_t get_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (uint16_t(p[1]) << 8));
}

inline uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline void pack_record(uint8_t* p, const TimeTagRecord& r) {
    put_u64(p, r.timestamp_ps);
    p[8] = r.channel;
    p[9] = r.flags;
    p[10] = 0;
    p[11] = 0;
}

}  // namespace detail

// Streaming writer. The header (with its final record count) is emitted up
// front; finish() verifies the promised count was delivered.
class StreamWriter {
public:
    StreamWriter(std::ostream& out, const StreamHeader& header)
        : out_(out), header_(header) {
        if (header.channels.size() > 256)
            throw ParseError(ParseCode::bad_channel_map, 6, "more than 256 channel entries");
        mapped_.fill(false);
        for (const auto& c : header.channels) {
            if (mapped_[c.id])
                throw ParseError(ParseCode::bad_channel_map, 8, "duplicate channel id " +
                                 std::to_string(c.id));
            if (static_cast<uint8_t>(c.role) > 3)
                throw ParseError(ParseCode::bad_channel_map, 8, "unknown role value");
            mapped_[c.id] = true;
        }
        std::vector<uint8_t> h(header.byte_size());
        std::memcpy(h.data(), kMagic.data(), 4);
        detail::put_u16(h.data() + 4, header.version);
        detail::put_u16(h.data() + 6, static_cast<uint16_t>(header.channels.size()));
        size_t off = 8;
        for (const auto& c : header.channels) {
            h[off++] = c.id;
            h[off++] = static_cast<uint8_t>(c.role);
        }
        std::memcpy(h.data() + off, header.config_digest.data(), 32);
        detail::put_u64(h.data() + off + 32, header.record_count);
        out_.write(reinterpret_cast<const char*>(h.data()), static_cast<std::streamsize>(h.size()));
        bytes_ = h.size();
        buffer_.resize(kBufferRecords * kRecordSize);
    }

    void write(const TimeTagRecord& rec) { write(std::span<const TimeTagRecord>(&rec, 1)); }

    void write(std::span<const TimeTagRecord> records) {
        for (const auto& r : records) {
            if (r.timestamp_ps < last_ts_)
                throw ParseError(ParseCode::unsorted_input, bytes_ + fill_ * kRecordSize,
                                 "record " + std::to_string(written_) + " out of order");
            if (!mapped_[r.channel])
                throw ParseError(ParseCode::unmapped_input, bytes_ + fill_ * kRecordSize,
                                 "channel " + std::to_string(r.channel) + " not in header map");
            last_ts_ = r.timestamp_ps;
            detail::pack_record(buffer_.data() + fill_ * kRecordSize, r);
            ++written_;
            if (++fill_ == kBufferRecords) flush_buffer();
        }
    }

    // Returns total bytes written (header + records).
    uint64_t finish() {
        flush_buffer();
        out_.flush();
        if (!out_)
            throw ParseError(ParseCode::io_error, bytes_, "sink write failed");
        if (written_ != header_.record_count)
            throw ParseError(ParseCode::count_mismatch, bytes_,
                             "wrote " + std::to_string(written_) + " records, header promised " +
                             std::to_string(header_.record_count));
        return bytes_;
    }

    uint64_t records_written() const { return written_; }

private:
    static constexpr size_t kBufferRecords = 1 << 16;

    void flush_buffer() {
        if (fill_ == 0) return;
        out_.write(reinterpret_cast<const char*>(buffer_.data()),
                   static_cast<std::streamsize>(fill_ * kRecordSize));
        bytes_ += fill_ * kRecordSize;
        fill_ = 0;
    }

    std::ostream& out_;
    StreamHeader header_;
    std::array<bool, 256> mapped_{};
    std::vector<uint8_t> buffer_;
    size_t fill_ = 0;
    uint64_t written_ = 0;
    uint64_t bytes_ = 0;
    uint64_t last_ts_ = 0;
};

// One-shot convenience; the header's record count is taken from the data.
inline uint64_t write_stream(StreamHeader header, std::span<const TimeTagRecord> records,
                             std::ostream& out) {
    header.record_count = records.size();
    StreamWriter writer(out, header);
    writer.write(records);
    return writer.finish();
}

// Validating single-pass reader. Memory use is one fixed chunk regardless of
// file size; every record is checked against the header map and for
// timestamp monotonicity as it streams by.
class StreamReader {
public:
    explicit StreamReader(std::istream& in) : in_(in) {
        chunk_.resize(kChunkBytes);
        uint8_t fixed[8];
        must_read(fixed, 8, ParseCode::truncated_header, "header shorter than 8 bytes");
        if (std::memcmp(fixed, kMagic.data(), 4) != 0)
            throw ParseError(ParseCode::bad_magic, 0, "expected QTT1");
        header_.version = detail::get_u16(fixed + 4);
        if (header_.version != kVersion)
            throw ParseError(ParseCode::bad_version, 4,
                             "version " + std::to_string(header_.version) + " unsupported");
        const uint16_t n_channels = detail::get_u16(fixed + 6);
        mapped_.fill(false);
        for (uint16_t i = 0; i < n_channels; ++i) {
            uint8_t entry[2];
            must_read(entry, 2, ParseCode::truncated_header, "channel map cut short");
            if (mapped_[entry[0]])
                throw ParseError(ParseCode::bad_channel_map, offset_ - 2,
                                 "duplicate channel id " + std::to_string(entry[0]));
            if (entry[1] > 3)
                throw ParseError(ParseCode::bad_channel_map, offset_ - 1,
                                 "unknown role value " + std::to_string(entry[1]));
            mapped_[entry[0]] = true;
            header_.channels.push_back({entry[0], static_cast<ChannelRole>(entry[1])});
        }
        must_read(header_.config_digest.data(), 32, ParseCode::truncated_header,
                  "config digest cut short");
        uint8_t count[8];
        must_read(count, 8, ParseCode::truncated_header, "record count cut short");
        header_.record_count = detail::get_u64(count);
    }

    const StreamHeader& header() const { return header_; }
    uint64_t records_read() const { return read_; }

    // Yields the next record, or false once the promised count has been
    // consumed and the source is clean at EOF.
    bool next(TimeTagRecord& out) {
        if (read_ == header_.record_count) {
            check_end();
            return false;
        }
        if (avail_ < kRecordSize) refill();
        if (avail_ < kRecordSize)
            throw ParseError(ParseCode::truncated_record, offset_ + avail_,
                             "record " + std::to_string(read_) + " cut short (" +
                             std::to_string(header_.record_count) + " promised)");
        const uint8_t* p = chunk_.data() + pos_;
        out.timestamp_ps = detail::get_u64(p);
        out.channel = p[8];
        out.flags = p[9];
        if (p[10] != 0 || p[11] != 0)
            throw ParseError(ParseCode::bad_reserved_bytes, offset_ + 10,
                             "record " + std::to_string(read_));
        if (out.flags & ~uint8_t{0x01})
            throw ParseError(ParseCode::bad_flags, offset_ + 9,
                             "record " + std::to_string(read_) + " sets reserved flag bits");
        if (!mapped_[out.channel])
            throw ParseError(ParseCode::unmapped_channel, offset_ + 8,
                             "record " + std::to_string(read_) + " on channel " +
                             std::to_string(out.channel));
        if (out.timestamp_ps < last_ts_)
            throw ParseError(ParseCode::non_monotone_timestamp, offset_,
                             "record " + std::to_string(read_) + " goes back in time");
        last_ts_ = out.timestamp_ps;
        pos_ += kRecordSize;
        avail_ -= kRecordSize;
        offset_ += kRecordSize;
        ++read_;
        return true;
    }

private:
    static constexpr size_t kChunkBytes = size_t{1} << 20;

    void must_read(uint8_t* dst, size_t n, ParseCode code, const char* what) {
        in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        const size_t got = static_cast<size_t>(in_.gcount());
        if (got != n) throw ParseError(code, offset_ + got, what);
        offset_ += n;
    }

    void refill() {
        if (avail_ > 0) std::memmove(chunk_.data(), chunk_.data() + pos_, avail_);
        pos_ = 0;
        in_.read(reinterpret_cast<char*>(chunk_.data() + avail_),
                 static_cast<std::streamsize>(chunk_.size() - avail_));
        avail_ += static_cast<size_t>(in_.gcount());
        if (!in_ && !in_.eof())
            throw ParseError(ParseCode::io_error, offset_ + avail_, "source read failed");
    }

    void check_end() {
        if (end_checked_) return;
        if (avail_ == 0) refill();
        if (avail_ != 0)
            throw ParseError(ParseCode::trailing_data, offset_,
                             std::to_string(avail_) + "+ bytes past the promised record count");
        end_checked_ = true;
    }

    std::istream& in_;
    StreamHeader header_;
    std::array<bool, 256> mapped_{};
    std::vector<uint8_t> chunk_;
    size_t pos_ = 0;
    size_t avail_ = 0;
    uint64_t offset_ = 0;
    uint64_t read_ = 0;
    uint64_t last_ts_ = 0;
    bool end_checked_ = false;
};

inline std::pair<StreamHeader, std::vector<TimeTagRecord>> read_all(std::istream& in) {
    StreamReader reader(in);
    std::vector<TimeTagRecord> records;
    TimeTagRecord rec;
    while (reader.next(rec)) records.push_back(rec);
    return {reader.header(), std::move(records)};
}

// Chunked consumer interface shared by the file writer and the streaming
// analyzer, so simulation output can bypass disk entirely.
struct RecordSink {
    virtual void on_records(std::span<const TimeTagRecord> batch) = 0;
    virtual ~RecordSink() = default;
};

class WriterSink : public RecordSink {
public:
    explicit WriterSink(StreamWriter& writer) : writer_(writer) {}
    void on_records(std::span<const TimeTagRecord> batch) override { writer_.write(batch); }

private:
    StreamWriter& writer_;
};

class CollectSink : public RecordSink {
public:
    void on_records(std::span<const TimeTagRecord> batch) override {
        records.insert(records.end(), batch.begin(), batch.end());
    }
    std::vector<TimeTagRecord> records;
};

class TeeSink : public RecordSink {
public:
    TeeSink(RecordSink& a, RecordSink& b) : a_(a), b_(b) {}
    void on_records(std::span<const TimeTagRecord> batch) override {
        a_.on_records(batch);
        b_.on_records(batch);
    }

private:
    RecordSink& a_;
    RecordSink& b_;
};

// Drives a sink from a parsed stream in fixed-size batches.
inline uint64_t pump(StreamReader& reader, RecordSink& sink, size_t batch_records = 1 << 15) {
    std::vector<TimeTagRecord> batch(batch_records);
    uint64_t total = 0;
    for (;;) {
        size_t n = 0;
        while (n < batch.size() && reader.next(batch[n])) ++n;
        if (n == 0) break;
        sink.on_records(std::span<const TimeTagRecord>(batch.data(), n));
        total += n;
        if (n < batch.size()) break;
    }
    return total;
}

}  // namespace ionlink::qtt
