#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <string>

#include "sscsr/dataio.hpp"
#include "sscsr/sigsim.hpp"

using Catch::Approx;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool bit_identical(const sscsr::IqVector& a, const sscsr::IqVector& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(a[0])) == 0;
}

// Tiny dataset with unique, recognizable content per record.
sscsr::SignalDataset make_synthetic(int num_classes, int per_class, int sample_len) {
    sscsr::SignalDataset ds;
    ds.num_classes = num_classes;
    ds.sample_len = sample_len;
    float tag = 0.0f;
    auto next_iq = [&]() {
        sscsr::IqVector iq(static_cast<std::size_t>(sample_len));
        for (auto& z : iq) {
            z = {tag, -tag * 0.5f};
            tag += 1.0f;
        }
        return iq;
    };
    for (int c = 0; c < num_classes; ++c) {
        for (int i = 0; i < per_class; ++i) ds.labeled.push_back({next_iq(), c});
        ds.unlabeled.push_back(next_iq());
        ds.val.push_back({next_iq(), c});
        ds.test.push_back({next_iq(), c});
    }
    return ds;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("./" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("dataset round-trip is bit-exact across all partitions") {
    auto ds = make_synthetic(3, 5, 16);
    TempFile f("rt.sscsr");
    sscsr::write_dataset(ds, f.path);
    auto back = sscsr::read_dataset(f.path);

    REQUIRE(back.num_classes == ds.num_classes);
    REQUIRE(back.sample_len == ds.sample_len);
    REQUIRE(back.labeled.size() == ds.labeled.size());
    REQUIRE(back.unlabeled.size() == ds.unlabeled.size());
    REQUIRE(back.val.size() == ds.val.size());
    REQUIRE(back.test.size() == ds.test.size());
    for (std::size_t i = 0; i < ds.labeled.size(); ++i) {
        REQUIRE(back.labeled[i].label == ds.labeled[i].label);
        REQUIRE(bit_identical(back.labeled[i].iq, ds.labeled[i].iq));
    }
    for (std::size_t i = 0; i < ds.unlabeled.size(); ++i) {
        REQUIRE(bit_identical(back.unlabeled[i], ds.unlabeled[i]));
    }
    for (std::size_t i = 0; i < ds.val.size(); ++i) {
        REQUIRE(back.val[i].label == ds.val[i].label);
        REQUIRE(bit_identical(back.val[i].iq, ds.val[i].iq));
    }
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
        REQUIRE(bit_identical(back.test[i].iq, ds.test[i].iq));
    }

    // Writing the read-back dataset reproduces the file byte for byte.
    TempFile f2("rt2.sscsr");
    sscsr::write_dataset(back, f2.path);
    REQUIRE(slurp(f.path) == slurp(f2.path));
}

TEST_CASE("simulated waveforms survive the file format unchanged") {
    sscsr::SimConfig cfg;
    cfg.num_devices = 2;
    cfg.samples_per_class = 5;
    cfg.sample_len = 64;
    cfg.seed = 12;
    auto ds = sscsr::simulate_dataset(cfg, sscsr::make_device_profiles(2, 12));
    TempFile f("sim_rt.sscsr");
    sscsr::write_dataset(ds, f.path);
    auto back = sscsr::read_dataset(f.path);
    for (std::size_t i = 0; i < ds.labeled.size(); ++i) {
        REQUIRE(bit_identical(back.labeled[i].iq, ds.labeled[i].iq));
    }
}

TEST_CASE("corrupted magic is reported at offset 0") {
    auto ds = make_synthetic(2, 2, 4);
    TempFile f("badmagic.sscsr");
    sscsr::write_dataset(ds, f.path);
    auto bytes = slurp(f.path);
    bytes[0] = 'X';
    spit(f.path, bytes);
    try {
        sscsr::read_dataset(f.path);
        FAIL("expected FormatError");
    } catch (const sscsr::FormatError& e) {
        REQUIRE(e.offset == 0);
        REQUIRE(std::string(e.what()).find("at byte 0") != std::string::npos);
    }
}

TEST_CASE("unsupported version is reported at its byte") {
    auto ds = make_synthetic(2, 2, 4);
    TempFile f("badver.sscsr");
    sscsr::write_dataset(ds, f.path);
    auto bytes = slurp(f.path);
    bytes[6] = 9;
    spit(f.path, bytes);
    try {
        sscsr::read_dataset(f.path);
        FAIL("expected FormatError");
    } catch (const sscsr::FormatError& e) {
        REQUIRE(e.offset == 6);
    }
}

TEST_CASE("truncated body is a format error at the cut") {
    auto ds = make_synthetic(2, 3, 8);
    TempFile f("trunc.sscsr");
    sscsr::write_dataset(ds, f.path);
    auto bytes = slurp(f.path);
    spit(f.path, bytes.substr(0, bytes.size() - 10));
    try {
        sscsr::read_dataset(f.path);
        FAIL("expected FormatError");
    } catch (const sscsr::FormatError& e) {
        REQUIRE(e.offset > 0);
        REQUIRE(std::string(e.what()).find("truncated") != std::string::npos);
    }

    // A header alone, with its promised records missing, is also truncation.
    spit(f.path, bytes.substr(0, 31));
    REQUIRE_THROWS_AS(sscsr::read_dataset(f.path), sscsr::FormatError);
}

TEST_CASE("header/body record count disagreement is a format error") {
    auto ds = make_synthetic(2, 2, 4);
    TempFile f("count.sscsr");
    sscsr::write_dataset(ds, f.path);
    auto bytes = slurp(f.path);

    // Inflate the labeled count: body runs out early.
    std::string inflated = bytes;
    inflated[15] = static_cast<char>(inflated[15] + 1);
    spit(f.path, inflated);
    REQUIRE_THROWS_AS(sscsr::read_dataset(f.path), sscsr::FormatError);

    // Extra bytes after the final record.
    std::string padded = bytes + std::string(8, '\0');
    spit(f.path, padded);
    try {
        sscsr::read_dataset(f.path);
        FAIL("expected FormatError");
    } catch (const sscsr::FormatError& e) {
        REQUIRE(e.offset == bytes.size());
        REQUIRE(std::string(e.what()).find("trailing") != std::string::npos);
    }
}

TEST_CASE("labels outside [0, C) and stray unlabeled labels are rejected") {
    auto ds = make_synthetic(2, 1, 2);
    TempFile f("badlabel.sscsr");
    sscsr::write_dataset(ds, f.path);
    auto bytes = slurp(f.path);

    // First labeled record's label lives right after the 31-byte header.
    std::string bad = bytes;
    std::int32_t big = 7;
    std::memcpy(&bad[31], &big, 4);
    spit(f.path, bad);
    try {
        sscsr::read_dataset(f.path);
        FAIL("expected FormatError");
    } catch (const sscsr::FormatError& e) {
        REQUIRE(e.offset == 31);
    }

    // First unlabeled record follows 2 labeled records of 4 + 16 bytes each.
    const std::size_t unl_at = 31 + 2 * 20;
    std::string bad2 = bytes;
    std::int32_t zero = 0;
    std::memcpy(&bad2[unl_at], &zero, 4);
    spit(f.path, bad2);
    try {
        sscsr::read_dataset(f.path);
        FAIL("expected FormatError");
    } catch (const sscsr::FormatError& e) {
        REQUIRE(e.offset == unl_at);
    }
}

TEST_CASE("missing file raises a plain error") {
    REQUIRE_THROWS_AS(sscsr::read_dataset("./no_such_file.sscsr"), sscsr::Error);
}

TEST_CASE("condition assignment keeps M labeled and strips N per class") {
    auto ds = make_synthetic(3, 40, 2);
    sscsr::DataCondition cond{4, 10};
    auto split = sscsr::assign_condition(ds.labeled, cond, 5);

    REQUIRE(split.labeled.size() == 3 * 4);
    REQUIRE(split.unlabeled.size() == 3 * 10);
    int per_class[3] = {0, 0, 0};
    for (const auto& s : split.labeled) per_class[s.label]++;
    for (int c : per_class) REQUIRE(c == 4);

    // Labeled and unlabeled picks never overlap: every record in the
    // synthetic pool has a unique leading sample.
    std::set<float> labeled_tags;
    for (const auto& s : split.labeled) labeled_tags.insert(s.iq[0].real());
    REQUIRE(labeled_tags.size() == split.labeled.size());
    for (const auto& iq : split.unlabeled) {
        REQUIRE(labeled_tags.count(iq[0].real()) == 0);
    }
}

TEST_CASE("condition assignment is deterministic in the seed") {
    auto ds = make_synthetic(2, 6000, 2);
    sscsr::DataCondition cond{10, 100};

    auto a = sscsr::assign_condition(ds.labeled, cond, 1);
    auto b = sscsr::assign_condition(ds.labeled, cond, 1);
    REQUIRE(a.labeled.size() == b.labeled.size());
    for (std::size_t i = 0; i < a.labeled.size(); ++i) {
        REQUIRE(bit_identical(a.labeled[i].iq, b.labeled[i].iq));
    }
    for (std::size_t i = 0; i < a.unlabeled.size(); ++i) {
        REQUIRE(bit_identical(a.unlabeled[i], b.unlabeled[i]));
    }

    // A different seed picks a different labeled subset.
    auto c = sscsr::assign_condition(ds.labeled, cond, 2);
    std::set<float> tags_a, tags_c;
    for (const auto& s : a.labeled) tags_a.insert(s.iq[0].real());
    for (const auto& s : c.labeled) tags_c.insert(s.iq[0].real());
    REQUIRE(tags_a != tags_c);
}

TEST_CASE("N = 0 yields a purely supervised partition") {
    auto ds = make_synthetic(2, 8, 2);
    auto split = sscsr::assign_condition(ds.labeled, {3, 0}, 7);
    REQUIRE(split.labeled.size() == 6);
    REQUIRE(split.unlabeled.empty());
}

TEST_CASE("condition assignment leaves val and test untouched") {
    auto ds = make_synthetic(2, 10, 4);
    auto out = sscsr::assign_condition(ds, {2, 3}, 11);
    REQUIRE(out.labeled.size() == 4);
    REQUIRE(out.unlabeled.size() == 6);
    REQUIRE(out.val.size() == ds.val.size());
    REQUIRE(out.test.size() == ds.test.size());
    for (std::size_t i = 0; i < ds.val.size(); ++i) {
        REQUIRE(bit_identical(out.val[i].iq, ds.val[i].iq));
        REQUIRE(out.val[i].label == ds.val[i].label);
    }
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
        REQUIRE(bit_identical(out.test[i].iq, ds.test[i].iq));
    }
    REQUIRE(out.num_classes == ds.num_classes);
    REQUIRE(out.sample_len == ds.sample_len);
}

TEST_CASE("condition assignment rejects impossible requests") {
    auto ds = make_synthetic(2, 10, 2);
    REQUIRE_THROWS_AS(sscsr::assign_condition(ds.labeled, {8, 5}, 1), sscsr::ConfigError);
    REQUIRE_THROWS_AS(sscsr::assign_condition(ds.labeled, {0, 5}, 1), sscsr::ConfigError);
    REQUIRE_THROWS_AS(sscsr::assign_condition(ds.labeled, {1, -1}, 1), sscsr::ConfigError);
    std::vector<sscsr::LabeledSample> empty;
    REQUIRE_THROWS_AS(sscsr::assign_condition(empty, {1, 0}, 1),
                      sscsr::DegenerateInputError);
}
