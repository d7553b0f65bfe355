// spawnlab/tests/test_corpus.cc

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABILITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "spawnlab/corpus.hpp"
#include "spawnlab/errors.hpp"
#include "testutil.hpp"

using namespace spawnlab;
using spawnlab::testing::TempDir;
using spawnlab::testing::two_cluster_config;

TEST_CASE("generation is a pure function of config and seed") {
  SynthConfig cfg = two_cluster_config(6, 3);
  Corpus a = generate_synthetic_corpus(cfg, 17);
  Corpus b = generate_synthetic_corpus(cfg, 17);
  CHECK(a == b);
  Corpus c = generate_synthetic_corpus(cfg, 18);
  CHECK_FALSE(a == c);
}

TEST_CASE("corpus counts follow the config") {
  SynthConfig cfg = two_cluster_config(4, 3);
  Corpus corpus = generate_synthetic_corpus(cfg, 1);
  CHECK(corpus.num_speakers() == 4);
  CHECK(corpus.num_utterances() == 12);
  for (int i = 0; i < 12; ++i) CHECK(corpus.utterances[i].utt_id == i);
  // Round-robin cell assignment over (us,f), (gb,f).
  CHECK(corpus.speakers[0].locale == "us");
  CHECK(corpus.speakers[1].locale == "gb");
  CHECK(corpus.speakers[2].locale == "us");
}

TEST_CASE("zero noise makes frames a function of tokens and speaker") {
  SynthConfig cfg = two_cluster_config(2, 8, 10.0, 0.1, /*noise_scale=*/0.0);
  cfg.vocab_size = 1;  // every utterance has the same token values
  cfg.min_tokens = 4;
  cfg.max_tokens = 4;
  Corpus corpus = generate_synthetic_corpus(cfg, 5);
  const auto groups = corpus.utterances_by_speaker();
  for (int j = 0; j < corpus.num_speakers(); ++j) {
    for (size_t u = 1; u < groups[j].size(); ++u) {
      const Utterance& first = corpus.utterances[groups[j][0]];
      const Utterance& other = corpus.utterances[groups[j][u]];
      REQUIRE(first.tokens == other.tokens);
      CHECK(first.frames == other.frames);
    }
  }
  // Different speakers in different cells must differ (B z_j shift).
  CHECK_FALSE(corpus.utterances[groups[0][0]].frames ==
              corpus.utterances[groups[1][0]].frames);
}

TEST_CASE("well-separated cells give clustered truth vectors") {
  // Centers 10 apart, scales 0.1: between/within distance ratio must be > 5.
  SynthConfig cfg = two_cluster_config(16, 2, 10.0, 0.1);
  Corpus corpus = generate_synthetic_corpus(cfg, 23);
  REQUIRE(corpus.truth.has_value());
  const Matrix& z = corpus.truth->vectors;

  auto mean_dist = [&](bool same_cell) {
    double total = 0.0;
    int count = 0;
    for (int a = 0; a < z.rows(); ++a) {
      for (int b = a + 1; b < z.rows(); ++b) {
        bool same = corpus.speakers[a].locale == corpus.speakers[b].locale;
        if (same != same_cell) continue;
        double sq = 0.0;
        for (int d = 0; d < z.cols(); ++d) {
          double diff = z(a, d) - z(b, d);
          sq += diff * diff;
        }
        total += std::sqrt(sq);
        ++count;
      }
    }
    REQUIRE(count > 0);
    return total / count;
  };

  double within = mean_dist(true);
  double between = mean_dist(false);
  CHECK(between / within > 5.0);
}

TEST_CASE("generation rejects nonsense configs") {
  SynthConfig cfg = two_cluster_config(4, 2);
  SynthConfig bad = cfg;
  bad.num_speakers = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(bad, 1), ConfigError);
  bad = cfg;
  bad.frame_dim = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(bad, 1), ConfigError);
  bad = cfg;
  bad.locales.clear();
  CHECK_THROWS_AS(generate_synthetic_corpus(bad, 1), ConfigError);
  bad = cfg;
  bad.cells[0].scales(0, 0) = 0.0;
  CHECK_THROWS_AS(generate_synthetic_corpus(bad, 1), ConfigError);
  bad = cfg;
  bad.cells[0].locale = "de";
  CHECK_THROWS_AS(generate_synthetic_corpus(bad, 1), ConfigError);
}

TEST_CASE("split is stratified per speaker with max(1, round(f*n)) eval items") {
  SUBCASE("two utterances at fraction 0.5 go one to each side") {
    Corpus corpus = generate_synthetic_corpus(two_cluster_config(4, 2), 3);
    auto [train, eval] = split_eval(corpus, 0.5, 9);
    CHECK(train.num_utterances() == 4);
    CHECK(eval.num_utterances() == 4);
    for (const auto& group : eval.utterances_by_speaker()) CHECK(group.size() == 1);
  }
  SUBCASE("J=10 with 10 utterances each at fraction 0.2 yields 2 eval per speaker") {
    SynthConfig cfg = two_cluster_config(10, 10);
    Corpus corpus = generate_synthetic_corpus(cfg, 3);
    auto [train, eval] = split_eval(corpus, 0.2, 9);
    CHECK(eval.num_utterances() == 20);
    for (const auto& group : eval.utterances_by_speaker()) CHECK(group.size() == 2);
    for (const auto& group : train.utterances_by_speaker()) CHECK(group.size() == 8);
  }
  SUBCASE("small fractions still reserve one eval utterance") {
    Corpus corpus = generate_synthetic_corpus(two_cluster_config(2, 20), 3);
    auto [train, eval] = split_eval(corpus, 0.02, 9);
    for (const auto& group : eval.utterances_by_speaker()) CHECK(group.size() == 1);
  }
}

TEST_CASE("split partitions the corpus exactly and deterministically") {
  Corpus corpus = generate_synthetic_corpus(two_cluster_config(6, 5), 11);
  auto [train1, eval1] = split_eval(corpus, 0.3, 77);
  auto [train2, eval2] = split_eval(corpus, 0.3, 77);
  CHECK(train1 == train2);
  CHECK(eval1 == eval2);

  std::set<int> seen;
  for (const auto& utt : train1.utterances) seen.insert(utt.utt_id);
  for (const auto& utt : eval1.utterances) {
    CHECK(seen.count(utt.utt_id) == 0);
    seen.insert(utt.utt_id);
  }
  CHECK(static_cast<int>(seen.size()) == corpus.num_utterances());

  auto [train3, eval3] = split_eval(corpus, 0.3, 78);
  CHECK_FALSE(eval1 == eval3);  // different seed shuffles differently
}

TEST_CASE("split refuses speakers that would end up empty") {
  Corpus corpus = generate_synthetic_corpus(two_cluster_config(4, 1), 3);
  CHECK_THROWS_AS(split_eval(corpus, 0.5, 1), ConfigError);

  Corpus two = generate_synthetic_corpus(two_cluster_config(4, 2), 3);
  // round(0.95 * 2) = 2 would leave zero train utterances.
  CHECK_THROWS_AS(split_eval(two, 0.95, 1), ConfigError);
  CHECK_THROWS_AS(split_eval(two, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_eval(two, 1.0, 1), ConfigError);
}

TEST_CASE("one-hot metadata encoding") {
  CorpusHeader header;
  header.vocab_size = 4;
  header.frame_dim = 2;
  header.locales = {"us", "gb"};
  header.genders = {"f", "m"};

  SpeakerMetadata us_f{0, "us", "f"};
  SpeakerMetadata gb_m{1, "gb", "m"};
  ConditioningSet both{true, true};
  ConditioningSet none{false, false};
  ConditioningSet gender_only{false, true};

  CHECK(one_hot_metadata(us_f, both, header) == Vec{1, 0, 1, 0});
  CHECK(one_hot_metadata(us_f, none, header) == Vec{});
  CHECK(one_hot_metadata(gb_m, gender_only, header) == Vec{0, 1});
  CHECK(one_hot_width(both, header) == 4);
  CHECK(one_hot_width(none, header) == 0);

  SpeakerMetadata unknown{2, "de", "f"};
  CHECK_THROWS_AS(one_hot_metadata(unknown, both, header), ConfigError);
}

TEST_CASE("conditioning set round-trips through strings") {
  ConditioningSet both{true, true};
  CHECK(ConditioningSet::from_strings(both.to_strings()) == both);
  ConditioningSet none;
  CHECK(ConditioningSet::from_strings({}) == none);
  CHECK(ConditioningSet::from_strings({"gender"}).gender);
  CHECK_FALSE(ConditioningSet::from_strings({"gender"}).locale);
  CHECK_THROWS_AS(ConditioningSet::from_strings({"accent"}), ConfigError);
}

TEST_CASE("save and load round-trip the corpus exactly") {
  SynthConfig cfg = two_cluster_config(5, 3, 10.0, 0.1, 0.05);
  Corpus corpus = generate_synthetic_corpus(cfg, 41);
  TempDir dir("corpus_roundtrip");
  save_corpus(corpus, dir.str());
  Corpus loaded = load_corpus(dir.str());
  CHECK(loaded == corpus);
}

TEST_CASE("loading reports malformed input with file and line") {
  Corpus corpus = generate_synthetic_corpus(two_cluster_config(3, 2), 7);

  SUBCASE("missing header") {
    TempDir dir("corpus_nohdr");
    CHECK_THROWS_AS(load_corpus(dir.str()), ParseError);
  }
  SUBCASE("corrupt utterance line") {
    TempDir dir("corpus_badline");
    save_corpus(corpus, dir.str());
    std::ofstream uf(dir.path() / "utterances.jsonl", std::ios::app);
    uf << "{not json\n";
    uf.close();
    try {
      load_corpus(dir.str());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("utterances.jsonl:7") != std::string::npos);
    }
  }
  SUBCASE("bad speakers header") {
    TempDir dir("corpus_badcsv");
    save_corpus(corpus, dir.str());
    std::ofstream sf(dir.path() / "speakers.csv");
    sf << "id,locale\n0,us\n";
    sf.close();
    CHECK_THROWS_AS(load_corpus(dir.str()), ParseError);
  }
  SUBCASE("unknown speaker reference fails validation") {
    TempDir dir("corpus_badref");
    save_corpus(corpus, dir.str());
    std::ofstream uf(dir.path() / "utterances.jsonl", std::ios::app);
    uf << R"({"utt_id":99,"speaker_id":42,"tokens":[0],"frames":[[0,0,0,0,0,0,0,0]]})"
       << "\n";
    uf.close();
    CHECK_THROWS_AS(load_corpus(dir.str()), ConfigError);
  }
}

TEST_CASE("validation catches inconsistent corpora") {
  Corpus corpus = generate_synthetic_corpus(two_cluster_config(3, 2), 7);

  Corpus bad = corpus;
  bad.utterances[0].tokens[0] = corpus.header.vocab_size;  // out of vocab
  CHECK_THROWS_AS(validate_corpus(bad), ConfigError);

  bad = corpus;
  bad.speakers[1].speaker_id = 5;  // not dense
  CHECK_THROWS_AS(validate_corpus(bad), ConfigError);

  bad = corpus;
  bad.utterances[0].frames = Matrix(bad.utterances[0].tokens.size(), 3);  // wrong F
  CHECK_THROWS_AS(validate_corpus(bad), ConfigError);

  bad = corpus;
  bad.truth->vectors = Matrix(1, bad.truth->dim);  // wrong speaker count
  CHECK_THROWS_AS(validate_corpus(bad), ConfigError);
}

TEST_CASE("make_separated_cells produces one tight mixture per cell") {
  auto cells = make_separated_cells({"us", "gb"}, {"f", "m"}, 8, 4.0, 0.3, 99);
  REQUIRE(cells.size() == 4);
  for (const auto& cell : cells) {
    CHECK(cell.weights == Vec{1.0});
    CHECK(cell.means.rows() == 1);
    CHECK(cell.means.cols() == 8);
    double n = 0.0;
    for (int d = 0; d < 8; ++d) n += cell.means(0, d) * cell.means(0, d);
    CHECK(std::sqrt(n) == doctest::Approx(4.0));
    CHECK(cell.scales(0, 0) == 0.3);
  }
  // Distinct centers for distinct cells.
  CHECK_FALSE(cells[0].means == cells[1].means);
}
