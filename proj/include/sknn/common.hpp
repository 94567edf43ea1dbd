#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sknn {

// Failure categories. The CLI maps each category to one machine-parseable
// error line, so library code should throw the most specific one that applies.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// SHA-256 digest; used to fingerprint taxonomy configs.
using Fingerprint = std::array<std::uint8_t, 32>;

Fingerprint sha256(std::string_view bytes);
std::string to_hex(const Fingerprint& fp);

// ---------------------------------------------------------------------------
// Little-endian binary encoding. All on-disk formats go through these two
// classes so the byte layout is identical on every host.
// ---------------------------------------------------------------------------

class ByteWriter {
  public:
    void u8(std::uint8_t v);
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void bytes(const void* p, std::size_t n);
    void str(std::string_view s); // u32 length prefix + raw bytes

    const std::string& data() const { return buf_; }
    std::string take() { return std::move(buf_); }

  private:
    std::string buf_;
};

class ByteReader {
  public:
    explicit ByteReader(std::string_view buf) : buf_(buf) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    void bytes(void* p, std::size_t n);
    std::string str();

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == buf_.size(); }

  private:
    void need(std::size_t n) const;

    std::string_view buf_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);

// Writes to a temp file in the same directory, then renames over the target.
// Either the complete file appears or nothing does.
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);

// Streaming variant for artifacts too large to assemble in memory.
class AtomicFileWriter {
  public:
    explicit AtomicFileWriter(const std::filesystem::path& path);
    ~AtomicFileWriter();
    AtomicFileWriter(const AtomicFileWriter&) = delete;
    AtomicFileWriter& operator=(const AtomicFileWriter&) = delete;

    void write(const void* p, std::size_t n);
    void write(std::string_view s) { write(s.data(), s.size()); }
    void commit();

  private:
    std::filesystem::path target_;
    std::filesystem::path temp_;
    int fd_ = -1;
    bool committed_ = false;
};

// Read-only memory map of a whole file.
class MappedFile {
  public:
    MappedFile() = default;
    explicit MappedFile(const std::filesystem::path& path);
    MappedFile(MappedFile&& other) noexcept;
    MappedFile& operator=(MappedFile&& other) noexcept;
    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;
    ~MappedFile();

    const std::uint8_t* data() const { return data_; }
    std::size_t size() const { return size_; }
    std::string_view view() const {
        return {reinterpret_cast<const char*>(data_), size_};
    }

  private:
    void reset();

    const std::uint8_t* data_ = nullptr;
    std::size_t size_ = 0;
};

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

// Stateless 64-bit mixer; drives split assignment and seed derivation.
std::uint64_t splitmix64(std::uint64_t x);

// Shortest decimal form that parses back to the same double. Used by the
// plain-text formats so write -> read -> write is byte-stable.
std::string format_double(double v);

unsigned default_threads();
void set_default_threads(unsigned n);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers must write
// results into per-index slots so output order is independent of scheduling.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

} // namespace sknn
