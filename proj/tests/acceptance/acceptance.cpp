// Acceptance runner: one PASS/FAIL line per criterion, JSON report optional.
#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "hlab/verification/criteria.hpp"

int main(int argc, char** argv) {
  CLI::App app{"hlab acceptance suite"};
  hlab::verify::SuiteOptions opt;
  std::vector<int> ids;
  std::string report, artifacts;
  app.add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--rerun-threads", opt.rerun_threads, "thread count of the reproducibility rerun");
  app.add_option("--seed", opt.seed, "master seed");
  app.add_option("--sources", opt.green_sources, "point sources per sample in the Green's function criteria")
      ->check(CLI::PositiveNumber);
  app.add_option("--only", ids, "criteria to run (default: all)")->check(CLI::Range(1, 12));
  app.add_option("--report", report, "write a JSON report here");
  app.add_option("--artifacts", artifacts, "keep criterion artifacts under this directory");
  CLI11_PARSE(app, argc, argv);
  if (ids.empty())
    for (int i = 1; i <= 12; ++i) ids.push_back(i);
  opt.artifacts = artifacts;

  nlohmann::json all = nlohmann::json::array();
  bool ok = true;
  const auto results = hlab::verify::run_suite(ids, opt, [&](const hlab::verify::CriterionResult& r) {
    std::printf("[%s] criterion %2d %-36s %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", r.id, r.title.c_str(),
                r.summary.c_str(), r.seconds);
    std::fflush(stdout);
    ok = ok && r.pass;
    all.push_back({{"id", r.id}, {"title", r.title}, {"pass", r.pass}, {"summary", r.summary},
                   {"seconds", r.seconds}, {"digest", r.digest}, {"details", r.details}});
  });
  std::printf("%zu/%zu criteria passed\n",
              static_cast<std::size_t>(std::count_if(results.begin(), results.end(), [](auto& r) { return r.pass; })),
              results.size());
  if (!report.empty()) std::ofstream(report) << all.dump(1) << '\n';
  return ok ? 0 : 1;
}
