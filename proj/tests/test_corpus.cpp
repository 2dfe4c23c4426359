#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>
#include <string>

#include "lmforge/corpus.hpp"
#include "lmforge/text.hpp"
#include "test_util.hpp"

using namespace lmforge;

namespace {
const std::string kDataDir = LMFORGE_DATA_DIR;
}

TEST_CASE("load_corpus splits documents on blank lines") {
    Corpus c = corpus_from_string("A b.\n\nC d.\n", CasingPolicy::kCased);
    REQUIRE(c.document_count() == 2);
    CHECK(c.documents[0] == std::vector<std::string>{"A b."});
    CHECK(c.documents[1] == std::vector<std::string>{"C d."});

    // Consecutive blank lines collapse; leading/trailing blanks are ignored.
    Corpus c2 = corpus_from_string("\n\na\n\n\n\nb\n\n", CasingPolicy::kCased);
    REQUIRE(c2.document_count() == 2);
    CHECK(c2.sentence_count() == 2);
}

TEST_CASE("uncased loading folds case but preserves Twi letters") {
    Corpus c = corpus_from_string("\xC6\x86kraman NO\n", CasingPolicy::kUncased);
    REQUIRE(c.sentence_count() == 1);
    CHECK(c.documents[0][0] == "ɔkraman no");
}

TEST_CASE("load_corpus normalizes combining sequences and strips trailing space") {
    // "e" + COMBINING ACUTE composes to the precomposed letter.
    Corpus c = corpus_from_string("né ba  \t\n", CasingPolicy::kCased);
    CHECK(c.documents[0][0] == "né ba");
}

TEST_CASE("load_corpus rejects non-UTF-8 input with a byte offset") {
    try {
        corpus_from_string(std::string("ab\xFF") + "cd\n", CasingPolicy::kCased);
        FAIL("expected EncodingError");
    } catch (const EncodingError& e) {
        CHECK(e.byte_offset() == 2);
    }
}

TEST_CASE("bundled toy corpus matches a line-counting oracle") {
    const std::string path = kDataDir + "/toy_corpus.txt";
    Corpus c = load_corpus(path, CasingPolicy::kCased);

    // Oracle: count non-blank lines and blank-separated groups directly.
    const std::string raw = read_text_file(path);
    int64_t sentences = 0, documents = 0;
    bool in_doc = false;
    size_t pos = 0;
    while (pos < raw.size()) {
        size_t eol = raw.find('\n', pos);
        if (eol == std::string::npos) eol = raw.size();
        const bool blank = eol == pos;
        if (blank) {
            in_doc = false;
        } else {
            ++sentences;
            if (!in_doc) {
                ++documents;
                in_doc = true;
            }
        }
        pos = eol + 1;
    }
    CHECK(c.sentence_count() == sentences);
    CHECK(c.document_count() == documents);
    CHECK(c.sentence_count() == 200);
}

TEST_CASE("load_corpus is idempotent over its own serialization") {
    Corpus c = load_corpus(kDataDir + "/toy_corpus.txt", CasingPolicy::kUncased);
    Corpus again = corpus_from_string(c.serialize(), CasingPolicy::kUncased);
    CHECK(again.documents == c.documents);
}

TEST_CASE("uncased corpora contain no character that lowercasing would change") {
    Corpus c = load_corpus(kDataDir + "/toy_corpus.txt", CasingPolicy::kUncased);
    for (const auto& doc : c.documents)
        for (const auto& sentence : doc)
            for (char32_t cp : text::decode_utf8(sentence))
                CHECK(text::simple_lowercase(cp) == cp);
}

TEST_CASE("split_train_valid partitions documents deterministically") {
    Corpus c;
    c.casing = CasingPolicy::kCased;
    for (int d = 0; d < 10; ++d)
        c.documents.push_back({"doc " + std::to_string(d) + " sentence"});

    auto [train, valid] = split_train_valid(c, 0.2, 7);
    CHECK(train.document_count() == 8);
    CHECK(valid.document_count() == 2);

    auto [train2, valid2] = split_train_valid(c, 0.2, 7);
    CHECK(train.documents == train2.documents);
    CHECK(valid.documents == valid2.documents);

    std::multiset<std::string> before, after;
    for (const auto& doc : c.documents) before.insert(doc[0]);
    for (const auto& doc : train.documents) after.insert(doc[0]);
    for (const auto& doc : valid.documents) after.insert(doc[0]);
    CHECK(before == after);

    Corpus single;
    single.documents.push_back({"only"});
    CHECK_THROWS_AS(split_train_valid(single, 0.5, 1), UsageError);
    CHECK_THROWS_AS(split_train_valid(c, 0.0, 1), UsageError);
}

TEST_CASE("sample_sentence_pairs: forced positive case") {
    Corpus c;
    c.documents.push_back({"s1", "s2"});
    auto pairs = sample_sentence_pairs(c, 1, 1.0, 3);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].sentence_a == "s1");
    CHECK(pairs[0].sentence_b == "s2");
    CHECK(pairs[0].is_next);
}

TEST_CASE("sample_sentence_pairs hits the requested positive rate") {
    Corpus c = load_corpus(kDataDir + "/toy_corpus.txt", CasingPolicy::kCased);
    auto pairs = sample_sentence_pairs(c, 10000, 0.5, 11);
    int64_t positives = 0;
    for (const auto& p : pairs) positives += p.is_next;
    const double rate = static_cast<double>(positives) / 10000.0;
    CHECK(rate >= 0.49);
    CHECK(rate <= 0.51);
}

TEST_CASE("every positive pair is adjacent in some document (scan oracle)") {
    Corpus c = load_corpus(kDataDir + "/toy_corpus.txt", CasingPolicy::kCased);
    auto pairs = sample_sentence_pairs(c, 500, 0.5, 13);
    for (const auto& p : pairs) {
        if (!p.is_next) continue;
        bool adjacent = false;
        for (const auto& doc : c.documents)
            for (size_t s = 0; s + 1 < doc.size(); ++s)
                if (doc[s] == p.sentence_a && doc[s + 1] == p.sentence_b)
                    adjacent = true;
        CHECK(adjacent);
    }
}

TEST_CASE("negative pairs from a single document are never adjacent") {
    Corpus c;
    c.documents.push_back({"a", "b", "c", "d", "e"});
    auto pairs = sample_sentence_pairs(c, 200, 0.0, 17);
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < c.documents[0].size(); ++i) index[c.documents[0][i]] = i;
    for (const auto& p : pairs) {
        CHECK_FALSE(p.is_next);
        CHECK(index[p.sentence_b] != index[p.sentence_a] + 1);
    }
}

TEST_CASE("sample_sentence_pairs is a pure function of its inputs") {
    Corpus c = load_corpus(kDataDir + "/tiny_corpus_64.txt", CasingPolicy::kCased);
    auto a = sample_sentence_pairs(c, 64, 0.5, 23);
    auto b = sample_sentence_pairs(c, 64, 0.5, 23);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].sentence_a == b[i].sentence_a);
        CHECK(a[i].sentence_b == b[i].sentence_b);
        CHECK(a[i].is_next == b[i].is_next);
    }
    Corpus no_pairs;
    no_pairs.documents.push_back({"only"});
    CHECK_THROWS_AS(sample_sentence_pairs(no_pairs, 4, 1.0, 1), UsageError);
}

TEST_CASE("load_wordsim parses rows and reports malformed input") {
    auto dir = testutil::temp_dir("wordsim");
    const std::string good = (dir / "good.tsv").string();
    write_text_file(good, "# comment\ndua\tbaum\t3.5\nfie\tdan\t8.0\nnsuo\tepo\t9.9\n");
    WordSimDataset ds = load_wordsim(good);
    REQUIRE(ds.rows.size() == 3);
    CHECK(ds.rows[0].human_score == doctest::Approx(3.5));

    const std::string bad = (dir / "bad.tsv").string();
    write_text_file(bad, "dua\tbaum\t3.5\ndua\tbaum2\n");
    try {
        load_wordsim(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }

    const std::string out_of_range = (dir / "range.tsv").string();
    write_text_file(out_of_range, "dua\tbaum\t11.0\n");
    CHECK_THROWS_AS(load_wordsim(out_of_range), ValidationError);

    const std::string dup = (dir / "dup.tsv").string();
    write_text_file(dup, "dua\tbaum\t3.0\nbaum\tdua\t4.0\n");
    CHECK_THROWS_AS(load_wordsim(dup), ValidationError);
}

TEST_CASE("bundled sentiment file is balanced 10/10") {
    SentimentDataset ds = load_sentiment(kDataDir + "/sentiment_twi.tsv");
    REQUIRE(ds.rows.size() == 20);
    CHECK(ds.count(SentimentLabel::kPositive) == 10);
    CHECK(ds.count(SentimentLabel::kNegative) == 10);

    auto dir = testutil::temp_dir("sentiment");
    const std::string bad = (dir / "bad.tsv").string();
    write_text_file(bad, "good stuff\tpositive\nbad label\tneutral\n");
    CHECK_THROWS_AS(load_sentiment(bad), ValidationError);
}

TEST_CASE("load_corpus raises IoError for a missing file") {
    CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.txt", CasingPolicy::kCased),
                    IoError);
}
