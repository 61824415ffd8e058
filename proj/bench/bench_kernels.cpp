#include <chrono>
#include <cstdio>
#include <vector>

#include "evad/ingest.hpp"
#include "evad/kernels.hpp"
#include "evad/model.hpp"
#include "evad/noise.hpp"
#include "evad/rng.hpp"
#include "evad/train.hpp"

using namespace evad;

namespace {

template <class F>
double seconds(F&& f, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t n_events = argc > 1 ? std::stoul(argv[1]) : 20000;
  const std::size_t dim = argc > 2 ? std::stoul(argv[2]) : 64;

  SynthConfig sc;
  sc.windows = 1;
  sc.train_windows = 1;
  sc.events_per_window = n_events;
  sc.anomaly_rate = 0;
  const auto raw = generate_synthetic(sc);
  Catalog catalog(Schema::authentication_default());
  std::vector<Event> events;
  for (const auto& r : raw) events.push_back(catalog.intern_event(r, 0, true));

  Rng rng(7);
  ModelParams params = ModelParams::initialize(catalog, dim, rng);
  const auto noise = NoiseTables::from_catalog(catalog);
  std::vector<const Event*> ptrs;
  std::vector<Negatives> negs;
  for (const auto& e : events) {
    ptrs.push_back(&e);
    negs.push_back(draw_negatives(e, noise, 20, rng));
  }

  ModelParams grad = ModelParams::zeros_like(params);
  const double t_serial = seconds([&] { accumulate_gradients_serial(params, ptrs, negs, noise, grad); }, 3);
  const double t_omp = seconds([&] { accumulate_gradients_omp(params, ptrs, negs, noise, grad); }, 3);
  std::printf("threads=%d events=%zu dim=%zu\n", max_threads(), n_events, dim);
  std::printf("gradient serial   %.4f s\n", t_serial);
  std::printf("gradient parallel %.4f s  (x%.2f)\n", t_omp, t_serial / t_omp);

  const double p_serial = seconds([&] { p_values_serial(params, events); }, 3);
  const double p_omp = seconds([&] { p_values_omp(params, events); }, 3);
  std::printf("p-values serial   %.4f s\n", p_serial);
  std::printf("p-values parallel %.4f s  (x%.2f)\n", p_omp, p_serial / p_omp);
  return 0;
}
