#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "simtraffic/errors.hpp"
#include "simtraffic/io.hpp"
#include "simtraffic/scenario.hpp"
#include "simtraffic/transport.hpp"

namespace st = simtraffic;

namespace {

int report(const std::exception& e, int code) {
  std::cerr << "simtraffic: " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-lane traffic simulator: microscopic and mean-field dynamics with lane changes."};
  app.require_subcommand(1);
  app.footer(st::scenario_schema() + "\nExit codes: 0 success, 1 invalid input, 2 numerical abort.\n"
             "SIMTRAFFIC_THREADS caps the worker threads of converge, stability and scheme-order.");

  std::string scenario_path;
  std::string out_dir = ".";
  for (const char* name : {"micro", "meanfield", "converge", "stability", "scheme-order"}) {
    auto* sub = app.add_subcommand(name, std::string("Run a ") + name + " scenario");
    sub->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
    sub->add_option("--out-dir", out_dir, "Output directory (default: current directory)");
  }

  std::string cloud_a, cloud_b;
  double gw_a = 1.0, gw_b = 1.0;
  bool plan = false;
  bool out_dir_given = false;
  auto* dist = app.add_subcommand("dist", "Generalized Wasserstein distance between two cloud CSV files");
  dist->add_option("cloud_a", cloud_a, "First cloud (x,v,mass)");
  dist->add_option("cloud_b", cloud_b, "Second cloud (x,v,mass)");
  dist->add_option("--a", gw_a, "Creation/destruction cost per unit mass");
  dist->add_option("--b", gw_b, "Transport cost per unit mass and distance");
  dist->add_flag("--plan", plan, "Also print the optimal plan as CSV src,dst,mass");
  dist->add_option("--scenario", scenario_path, "Scenario JSON file (alternative to positional clouds)");
  auto* dist_out = dist->add_option("--out-dir", out_dir, "Write distance.csv (and plan.csv) here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dist->parsed()) {
      out_dir_given = dist_out->count() > 0;
      if (scenario_path.empty()) {
        if (cloud_a.empty() || cloud_b.empty()) {
          throw st::ValidationError("dist: give two cloud files or --scenario");
        }
        for (const auto& p : {cloud_a, cloud_b}) {
          if (!std::filesystem::exists(p)) throw st::ValidationError("dist: file not found: " + p);
        }
        const auto a = st::read_cloud_csv_file(cloud_a);
        const auto b = st::read_cloud_csv_file(cloud_b);
        const auto r = st::gw11(a, b, gw_a, gw_b);
        std::cout << st::format_real(r.distance) << "\n";
        if (plan) std::cout << st::plan_to_csv(r.plan);
        if (out_dir_given) {
          st::write_file_atomic((std::filesystem::path(out_dir) / "distance.csv").string(),
                                "distance\n" + st::format_real(r.distance) + "\n");
          if (plan) st::write_file_atomic((std::filesystem::path(out_dir) / "plan.csv").string(), st::plan_to_csv(r.plan));
        }
        return 0;
      }
      auto s = st::load_scenario(scenario_path);
      if (s.mode != st::Mode::Dist) throw st::ValidationError("mode: scenario is not a dist scenario");
      st::run_scenario(s, out_dir_given ? out_dir : std::string(), std::cout);
      return 0;
    }
    const std::string name = app.get_subcommands().front()->get_name();
    const auto s = st::load_scenario(scenario_path);
    if (st::mode_name(s.mode) != name) {
      throw st::ValidationError("mode: scenario mode \"" + st::mode_name(s.mode) + "\" does not match subcommand \"" +
                                name + "\"");
    }
    st::run_scenario(s, out_dir, std::cout);
    return 0;
  } catch (const st::ValidationError& e) {
    return report(e, 1);
  } catch (const st::NumericalError& e) {
    return report(e, 2);
  } catch (const std::exception& e) {
    return report(e, 1);
  }
}
