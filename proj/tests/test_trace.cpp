#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "dynmal/error.hpp"
#include "dynmal/random.hpp"
#include "dynmal/trace.hpp"

using namespace dynmal;

namespace {

SyscallTrace make_trace(std::vector<std::pair<std::int64_t, std::string>> events) {
    SyscallTrace t;
    t.id = "t";
    for (auto& [step, call] : events) t.events.push_back({step, std::move(call)});
    return t;
}

SyscallTrace random_trace(Rng& rng, std::size_t max_len) {
    static const std::vector<std::string> names = {"A", "B", "C", "D", "E"};
    SyscallTrace t;
    t.id = "r";
    const auto len = uniform_index(rng, max_len + 1);
    std::int64_t step = 0;
    for (std::size_t i = 0; i < len; ++i) {
        step += static_cast<std::int64_t>(uniform_index(rng, 3));
        t.events.push_back({step, names[uniform_index(rng, names.size())]});
    }
    return t;
}

}  // namespace

TEST_CASE("vocabulary is sorted, unique, with a trailing OOV slot") {
    const std::vector<SyscallTrace> corpus = {make_trace({{0, "NtOpenKey"}, {1, "NtClose"}}),
                                              make_trace({{0, "NtClose"}})};
    const auto vocab = build_vocabulary(corpus);
    CHECK(vocab.names() == std::vector<std::string>{"NtClose", "NtOpenKey"});
    CHECK(vocab.oov_index() == 2);
    CHECK(vocab.width() == 3);
    CHECK(vocab.index_of("NtClose") == 0);
    CHECK(vocab.index_of("NtOpenKey") == 1);
    CHECK(vocab.index_of("NtUnknown") == 2);
    CHECK(vocab.column_name(2) == "<oov>");

    std::vector<SyscallTrace> reversed(corpus.rbegin(), corpus.rend());
    CHECK(build_vocabulary(reversed) == vocab);
}

TEST_CASE("empty corpus has no vocabulary") {
    CHECK_THROWS_WITH_AS(build_vocabulary(std::vector<SyscallTrace>{}), "empty vocabulary", ValidationError);
}

TEST_CASE("vocabulary file round trip") {
    const SyscallVocabulary vocab({"A", "B", "C"});
    std::stringstream ss;
    write_vocabulary(ss, vocab);
    CHECK(ss.str() == "A\nB\nC\n");
    CHECK(read_vocabulary(ss) == vocab);
}

TEST_CASE("vocabulary rejects unsorted or duplicate names") {
    CHECK_THROWS_AS(SyscallVocabulary({"B", "A"}), ValidationError);
    CHECK_THROWS_AS(SyscallVocabulary({"A", "A"}), ValidationError);
}

TEST_CASE("parse_trace accepts the documented record") {
    const auto t =
        parse_trace(R"({"id":"a","label":"malware","observed_at":5,"events":[[0,"NtClose"],[1,"NtReadFile"]]})");
    CHECK(t.id == "a");
    REQUIRE(t.label);
    CHECK(*t.label == Label::malware);
    CHECK(t.observed_at == 5);
    REQUIRE(t.events.size() == 2);
    CHECK(t.events[1].call == "NtReadFile");
    CHECK(t.events[1].time_step == 1);
}

TEST_CASE("parse_trace without a label yields an unlabeled trace") {
    const auto t = parse_trace(R"({"id":"u","observed_at":1,"events":[]})");
    CHECK_FALSE(t.label);
    const auto n = parse_trace(R"({"id":"u","label":null,"observed_at":1,"events":[]})");
    CHECK_FALSE(n.label);
}

TEST_CASE("parse_trace rejects decreasing time steps") {
    CHECK_THROWS_AS(parse_trace(R"({"id":"a","observed_at":0,"events":[[2,"X"],[1,"Y"]]})"), ValidationError);
    CHECK_THROWS_AS(parse_trace(R"({"id":"a","observed_at":0,"events":[[-1,"X"]]})"), ValidationError);
}

TEST_CASE("malformed records report their line") {
    std::stringstream ss;
    ss << R"({"id":"a","observed_at":0,"events":[]})" << "\n"
       << R"({"id":"b","observed_at":"x","events":[]})" << "\n";
    try {
        read_traces(ss);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_trace(R"({"id":"a","label":"virus","observed_at":0,"events":[]})"), ParseError);
    CHECK_THROWS_AS(parse_trace("not json"), ParseError);
}

TEST_CASE("JSON Lines round trip is lossless") {
    Rng rng = make_rng(7, 0);
    std::vector<SyscallTrace> traces;
    for (int i = 0; i < 20; ++i) {
        auto t = random_trace(rng, 30);
        t.id = "t" + std::to_string(i);
        t.observed_at = i * 3;
        if (i % 3 == 0) t.label = Label::malware;
        if (i % 3 == 1) t.label = Label::goodware;
        traces.push_back(t);
    }
    std::stringstream ss;
    write_traces(ss, traces);
    const auto back = read_traces(ss);
    REQUIRE(back.size() == traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) {
        CHECK(back[i].id == traces[i].id);
        CHECK(back[i].label == traces[i].label);
        CHECK(back[i].observed_at == traces[i].observed_at);
        CHECK(back[i].events == traces[i].events);
        CHECK(serialize_trace(back[i]) == serialize_trace(traces[i]));
    }
}

TEST_CASE("truncation keeps the first n events") {
    const auto t = make_trace({{0, "A"}, {1, "B"}, {2, "C"}, {3, "D"}, {4, "E"}});
    const auto t3 = truncate(t, TruncationLimit(3));
    REQUIRE(t3.events.size() == 3);
    CHECK(t3.events[2].call == "C");
    CHECK(truncate(t, TruncationLimit(5000)).events == t.events);
    CHECK(truncate(t3, TruncationLimit(3)).events == t3.events);
    CHECK(truncate(truncate(t, TruncationLimit(4)), TruncationLimit(2)).events ==
          truncate(t, TruncationLimit(2)).events);
    CHECK_THROWS_AS(TruncationLimit(0), ValidationError);
    CHECK(kDefaultTruncation == 1000);
}

TEST_CASE("multi-hot stores per-step counts") {
    const SyscallVocabulary vocab({"A", "B"});
    const auto m = encode_multihot(make_trace({{0, "A"}, {0, "A"}, {0, "B"}, {1, "B"}}), vocab);
    CHECK(m.width == 3);
    CHECK(m.time_steps == std::vector<std::int64_t>{0, 1});
    CHECK(m.counts == std::vector<std::uint32_t>{2, 1, 0, 0, 1, 0});
    CHECK(m.total() == 4);

    CHECK(encode_multihot(make_trace({}), vocab).rows() == 0);
    const auto oov = encode_multihot(make_trace({{3, "Z"}}), vocab);
    CHECK(oov.time_steps == std::vector<std::int64_t>{3});
    CHECK(oov.counts == std::vector<std::uint32_t>{0, 0, 1});
}

TEST_CASE("histogram counts and normalization") {
    const SyscallVocabulary vocab({"A", "B", "C"});
    const auto t = make_trace({{0, "A"}, {0, "B"}, {1, "A"}, {2, "C"}, {2, "A"}});
    const auto raw = encode_histogram(t, vocab, false);
    CHECK_FALSE(raw.normalized);
    CHECK(raw.values == std::vector<double>{3, 1, 1, 0});
    const auto norm = encode_histogram(t, vocab, true);
    CHECK(norm.normalized);
    CHECK(norm.values[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(norm.values[1] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(norm.values[2] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(norm.values[3] == 0.0);
    const auto empty = encode_histogram(make_trace({}), vocab, true);
    CHECK(empty.values == std::vector<double>(4, 0.0));
}

TEST_CASE("property: histogram equals multi-hot column sums") {
    Rng rng = make_rng(11, 0);
    const SyscallVocabulary vocab({"A", "B", "C"});  // D and E fall into OOV
    for (int trial = 0; trial < 300; ++trial) {
        const auto t = random_trace(rng, 60);
        const auto n = 1 + uniform_index(rng, 80);
        const auto tt = truncate(t, TruncationLimit(n));
        CHECK(tt.events.size() == std::min<std::size_t>(n, t.events.size()));
        const auto m = encode_multihot(tt, vocab);
        const auto h = encode_histogram(tt, vocab, false);
        std::vector<double> sums(vocab.width(), 0.0);
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (r > 0) CHECK(m.time_steps[r] > m.time_steps[r - 1]);
            for (std::size_t c = 0; c < m.width; ++c) sums[c] += m.row(r)[c];
        }
        CHECK(sums == h.values);
        CHECK(m.total() == tt.events.size());
        CHECK(std::accumulate(h.values.begin(), h.values.end(), 0.0) == static_cast<double>(tt.events.size()));
        const auto norm = encode_histogram(tt, vocab, true);
        if (!tt.events.empty())
            CHECK(std::accumulate(norm.values.begin(), norm.values.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("label helpers") {
    CHECK(to_string(Label::malware) == "malware");
    CHECK(label_from_string("goodware") == Label::goodware);
    CHECK(flip(Label::goodware) == Label::malware);
    CHECK_THROWS_AS(label_from_string("benign"), ParseError);
}
