// sscsr - flat binary dataset persistence and labeled/unlabeled assignment.
//
// File layout (little-endian):
//   magic "SSCSR1" (6 bytes), u8 version = 1,
//   u32 num_classes, u32 sample_len,
//   u32 count_labeled, u32 count_unlabeled, u32 count_val, u32 count_test,
//   then records of (i32 label, sample_len x 2 float32 interleaved I,Q)
//   in partition order labeled, unlabeled, val, test. Unlabeled records
//   carry label -1.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sscsr/dataset.hpp"
#include "sscsr/errors.hpp"
#include "sscsr/iq.hpp"
#include "sscsr/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset format assumes a little-endian host");

namespace sscsr {

inline constexpr char kDatasetMagic[6] = {'S', 'S', 'C', 'S', 'R', '1'};
inline constexpr std::uint8_t kDatasetVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
}

inline void put_record(std::string& out, const IqVector& iq, std::int32_t label,
                       std::size_t sample_len) {
    if (iq.size() != sample_len) {
        throw ShapeError("write_dataset: record length " + std::to_string(iq.size()) +
                         " != sample_len " + std::to_string(sample_len));
    }
    out.append(reinterpret_cast<const char*>(&label), 4);
    out.append(reinterpret_cast<const char*>(iq.data()),
               iq.size() * sizeof(std::complex<float>));
}

// Sequential reader that reports the byte offset of whatever is malformed.
class Cursor {
  public:
    Cursor(const char* data, std::size_t size) : data_(data), size_(size) {}

    std::size_t offset() const { return pos_; }

    const char* take(std::size_t n, const char* what) {
        if (pos_ + n > size_) {
            throw FormatError(std::string("truncated while reading ") + what, pos_);
        }
        const char* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    std::uint8_t u8(const char* what) {
        return static_cast<std::uint8_t>(*take(1, what));
    }

    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        std::memcpy(&v, take(4, what), 4);
        return v;
    }

    std::int32_t i32(const char* what) {
        std::int32_t v;
        std::memcpy(&v, take(4, what), 4);
        return v;
    }

    bool exhausted() const { return pos_ == size_; }

  private:
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline void write_dataset(const SignalDataset& ds, const std::string& path) {
    if (ds.num_classes < 1) throw ConfigError("write_dataset: num_classes must be >= 1");
    if (ds.sample_len < 1) throw ConfigError("write_dataset: sample_len must be >= 1");
    const auto sample_len = static_cast<std::size_t>(ds.sample_len);

    std::string buf;
    buf.reserve(23 + (ds.labeled.size() + ds.unlabeled.size() + ds.val.size() +
                      ds.test.size()) *
                         (4 + sample_len * 8));
    buf.append(kDatasetMagic, sizeof(kDatasetMagic));
    buf.push_back(static_cast<char>(kDatasetVersion));
    detail::put_u32(buf, static_cast<std::uint32_t>(ds.num_classes));
    detail::put_u32(buf, static_cast<std::uint32_t>(ds.sample_len));
    detail::put_u32(buf, static_cast<std::uint32_t>(ds.labeled.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(ds.unlabeled.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(ds.val.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(ds.test.size()));

    for (const auto& s : ds.labeled) detail::put_record(buf, s.iq, s.label, sample_len);
    for (const auto& iq : ds.unlabeled) detail::put_record(buf, iq, -1, sample_len);
    for (const auto& s : ds.val) detail::put_record(buf, s.iq, s.label, sample_len);
    for (const auto& s : ds.test) detail::put_record(buf, s.iq, s.label, sample_len);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("write_dataset: cannot open \"" + path + "\" for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out.good()) throw Error("write_dataset: write to \"" + path + "\" failed");
}

inline SignalDataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error("read_dataset: cannot open \"" + path + "\"");
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<char> raw(size);
    in.seekg(0);
    in.read(raw.data(), static_cast<std::streamsize>(size));
    if (!in.good()) throw Error("read_dataset: read from \"" + path + "\" failed");

    detail::Cursor cur(raw.data(), raw.size());
    const char* magic = cur.take(sizeof(kDatasetMagic), "magic");
    if (std::memcmp(magic, kDatasetMagic, sizeof(kDatasetMagic)) != 0) {
        throw FormatError("bad magic, not a dataset file", 0);
    }
    const std::size_t version_at = cur.offset();
    const std::uint8_t version = cur.u8("version");
    if (version != kDatasetVersion) {
        throw FormatError("unsupported version " + std::to_string(version), version_at);
    }

    SignalDataset ds;
    std::size_t field_at = cur.offset();
    const std::uint32_t num_classes = cur.u32("num_classes");
    if (num_classes < 1) throw FormatError("num_classes must be >= 1", field_at);
    field_at = cur.offset();
    const std::uint32_t sample_len = cur.u32("sample_len");
    if (sample_len < 1) throw FormatError("sample_len must be >= 1", field_at);
    ds.num_classes = static_cast<int>(num_classes);
    ds.sample_len = static_cast<int>(sample_len);

    const std::uint32_t n_labeled = cur.u32("labeled count");
    const std::uint32_t n_unlabeled = cur.u32("unlabeled count");
    const std::uint32_t n_val = cur.u32("val count");
    const std::uint32_t n_test = cur.u32("test count");

    auto read_iq = [&]() {
        const std::size_t bytes = static_cast<std::size_t>(sample_len) * 8;
        const char* p = cur.take(bytes, "record samples");
        IqVector iq(sample_len);
        std::memcpy(iq.data(), p, bytes);
        return iq;
    };
    auto read_labeled_into = [&](std::vector<LabeledSample>& dst, std::uint32_t n,
                                 const char* what) {
        dst.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::size_t label_at = cur.offset();
            const std::int32_t label = cur.i32(what);
            if (label < 0 || label >= static_cast<std::int32_t>(num_classes)) {
                throw FormatError(std::string("label out of range in ") + what, label_at);
            }
            dst.push_back({read_iq(), static_cast<int>(label)});
        }
    };

    read_labeled_into(ds.labeled, n_labeled, "labeled record");
    ds.unlabeled.reserve(n_unlabeled);
    for (std::uint32_t i = 0; i < n_unlabeled; ++i) {
        const std::size_t label_at = cur.offset();
        const std::int32_t label = cur.i32("unlabeled record");
        if (label != -1) {
            throw FormatError("unlabeled record must carry label -1", label_at);
        }
        ds.unlabeled.push_back(read_iq());
    }
    read_labeled_into(ds.val, n_val, "val record");
    read_labeled_into(ds.test, n_test, "test record");

    if (!cur.exhausted()) {
        throw FormatError("trailing bytes after final record", cur.offset());
    }
    return ds;
}

/// Labeled/unlabeled assignment for one data condition. Per class: M samples
/// keep their labels, N are stripped, the surplus is discarded. Selection is
/// a seeded shuffle, so a fixed seed always yields the same partition.
struct ConditionSplit {
    std::vector<LabeledSample> labeled;
    std::vector<IqVector> unlabeled;
};

inline ConditionSplit assign_condition(const std::vector<LabeledSample>& train_split,
                                       const DataCondition& condition, std::uint64_t seed) {
    if (condition.m_labeled_per_class < 1) {
        throw ConfigError("assign_condition: M must be >= 1");
    }
    if (condition.n_unlabeled_per_class < 0) {
        throw ConfigError("assign_condition: N must be >= 0");
    }
    const auto m = static_cast<std::size_t>(condition.m_labeled_per_class);
    const auto n = static_cast<std::size_t>(condition.n_unlabeled_per_class);

    int max_class = -1;
    for (const auto& s : train_split) max_class = std::max(max_class, s.label);
    if (max_class < 0) throw DegenerateInputError("assign_condition: empty train split");

    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_class) + 1);
    for (std::size_t i = 0; i < train_split.size(); ++i) {
        by_class[static_cast<std::size_t>(train_split[i].label)].push_back(i);
    }

    ConditionSplit out;
    out.labeled.reserve(by_class.size() * m);
    out.unlabeled.reserve(by_class.size() * n);
    for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
        auto& idx = by_class[cls];
        if (idx.size() < m + n) {
            throw ConfigError("assign_condition: class " + std::to_string(cls) + " has " +
                              std::to_string(idx.size()) + " train samples, need " +
                              std::to_string(m + n));
        }
        RngStream rng(hash_seed(seed, 0x636f6e64ULL, cls)); // "cond"
        rng.shuffle(idx);
        for (std::size_t i = 0; i < m; ++i) out.labeled.push_back(train_split[idx[i]]);
        for (std::size_t i = m; i < m + n; ++i) {
            out.unlabeled.push_back(train_split[idx[i]].iq);
        }
    }
    return out;
}

/// Dataset-level variant: reassigns the labeled pool, leaves val/test intact.
inline SignalDataset assign_condition(const SignalDataset& ds, const DataCondition& condition,
                                      std::uint64_t seed) {
    auto split = assign_condition(ds.labeled, condition, seed);
    SignalDataset out;
    out.labeled = std::move(split.labeled);
    out.unlabeled = std::move(split.unlabeled);
    out.val = ds.val;
    out.test = ds.test;
    out.num_classes = ds.num_classes;
    out.sample_len = ds.sample_len;
    return out;
}

} // namespace sscsr
