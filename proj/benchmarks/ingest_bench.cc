#include <benchmark/benchmark.h>

#include <sstream>
#include <string>

#include "karma/ingest.h"
#include "karma/pipeline.h"
#include "karma/synth.h"

namespace {

std::string synthetic_comment_dump(std::size_t n_posts) {
  karma::SynthConfig cfg;
  cfg.n_posts = n_posts;
  const auto dump = karma::generate_synthetic_corpus(cfg);
  std::string out;
  for (const auto& c : dump.comments) out += karma::to_dump_line(c) + "\n";
  return out;
}

void BM_IngestStream(benchmark::State& state) {
  const std::string text = synthetic_comment_dump(static_cast<std::size_t>(state.range(0)));
  const karma::FilterConfig cfg;
  std::size_t kept = 0;
  for (auto _ : state) {
    std::istringstream in(text);
    kept = karma::ingest_stream(in, karma::RecordKind::kComment, cfg,
                                [](const karma::RawRecord&, std::string_view) {})
               .kept;
    benchmark::DoNotOptimize(kept);
  }
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * text.size()));
  state.counters["kept"] = static_cast<double>(kept);
}
BENCHMARK(BM_IngestStream)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_BuildSyntheticCorpus(benchmark::State& state) {
  karma::SynthConfig synth;
  synth.n_posts = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto built = karma::build_synthetic_corpus(synth, {}, karma::SerializationMode::kGeneralized);
    benchmark::DoNotOptimize(built.instances.data());
  }
}
BENCHMARK(BM_BuildSyntheticCorpus)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
