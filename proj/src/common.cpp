#include "sknn/common.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <atomic>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>
#include <vector>

namespace sknn {

Fingerprint sha256(std::string_view bytes) {
    Fingerprint out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != out.size()) {
        throw NumericError("sha256 digest failed");
    }
    return out;
}

std::string to_hex(const Fingerprint& fp) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(fp.size() * 2);
    for (std::uint8_t b : fp) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// ByteWriter / ByteReader
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void put_le(std::string& buf, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

template <typename T>
T get_le(const std::string_view buf, std::size_t pos) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    }
    return v;
}

} // namespace

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
void ByteWriter::u16(std::uint16_t v) { put_le(buf_, v); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::bytes(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
}

void ByteWriter::str(std::string_view s) {
    if (s.size() > UINT32_MAX) throw DataError("string too long to serialize");
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
}

void ByteReader::need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw DataError("truncated binary payload");
}

std::uint8_t ByteReader::u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
}
std::uint16_t ByteReader::u16() {
    need(2);
    auto v = get_le<std::uint16_t>(buf_, pos_);
    pos_ += 2;
    return v;
}
std::uint32_t ByteReader::u32() {
    need(4);
    auto v = get_le<std::uint32_t>(buf_, pos_);
    pos_ += 4;
    return v;
}
std::uint64_t ByteReader::u64() {
    need(8);
    auto v = get_le<std::uint64_t>(buf_, pos_);
    pos_ += 8;
    return v;
}
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
}

std::string ByteReader::str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(buf_.substr(pos_, n));
    pos_ += n;
    return s;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw DataError("read failed: " + path.string());
    return s;
}

void atomic_write_file(const std::filesystem::path& path, std::string_view bytes) {
    AtomicFileWriter w(path);
    w.write(bytes);
    w.commit();
}

AtomicFileWriter::AtomicFileWriter(const std::filesystem::path& path) : target_(path) {
    temp_ = path;
    temp_ += ".tmp." + std::to_string(::getpid());
    fd_ = ::open(temp_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd_ < 0) throw DataError("cannot create temp file: " + temp_.string());
}

AtomicFileWriter::~AtomicFileWriter() {
    if (fd_ >= 0) ::close(fd_);
    if (!committed_) {
        std::error_code ec;
        std::filesystem::remove(temp_, ec);
    }
}

void AtomicFileWriter::write(const void* p, std::size_t n) {
    const char* cur = static_cast<const char*>(p);
    while (n > 0) {
        ssize_t w = ::write(fd_, cur, n);
        if (w < 0) throw DataError("write failed: " + temp_.string());
        cur += w;
        n -= static_cast<std::size_t>(w);
    }
}

void AtomicFileWriter::commit() {
    if (::fsync(fd_) != 0) throw DataError("fsync failed: " + temp_.string());
    if (::close(fd_) != 0) {
        fd_ = -1;
        throw DataError("close failed: " + temp_.string());
    }
    fd_ = -1;
    std::error_code ec;
    std::filesystem::rename(temp_, target_, ec);
    if (ec) throw DataError("rename failed: " + target_.string() + ": " + ec.message());
    committed_ = true;
}

MappedFile::MappedFile(const std::filesystem::path& path) {
    int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw DataError("cannot open file: " + path.string());
    struct stat st{};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw DataError("fstat failed: " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ == 0) {
        ::close(fd);
        data_ = nullptr;
        return;
    }
    void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd, 0);
    ::close(fd);
    if (p == MAP_FAILED) throw DataError("mmap failed: " + path.string());
    data_ = static_cast<const std::uint8_t*>(p);
}

MappedFile::MappedFile(MappedFile&& other) noexcept : data_(other.data_), size_(other.size_) {
    other.data_ = nullptr;
    other.size_ = 0;
}

MappedFile& MappedFile::operator=(MappedFile&& other) noexcept {
    if (this != &other) {
        reset();
        data_ = other.data_;
        size_ = other.size_;
        other.data_ = nullptr;
        other.size_ = 0;
    }
    return *this;
}

MappedFile::~MappedFile() { reset(); }

void MappedFile::reset() {
    if (data_ != nullptr) {
        ::munmap(const_cast<std::uint8_t*>(data_), size_);
        data_ = nullptr;
        size_ = 0;
    }
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string format_double(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        int n = std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        double back = 0.0;
        auto [ptr, ec] = std::from_chars(buf, buf + n, back);
        if (ec == std::errc() && ptr == buf + n && std::bit_cast<std::uint64_t>(back) == std::bit_cast<std::uint64_t>(v)) {
            return std::string(buf, static_cast<std::size_t>(n));
        }
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {
std::atomic<unsigned> g_threads{0};
}

unsigned default_threads() {
    unsigned n = g_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = std::thread::hardware_concurrency();
        if (n == 0) n = 1;
    }
    return n;
}

void set_default_threads(unsigned n) { g_threads.store(n, std::memory_order_relaxed); }

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (threads == 0) threads = default_threads();
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace sknn
