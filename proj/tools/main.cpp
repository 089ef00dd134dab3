#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>

#include "common.hpp"
#include "circuitprobe/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"circuitprobe: mechanistic probes for BERT cross-encoders", "circuitprobe"};
  app.set_config("--config", "", "key=value config file; flags override it");
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--model", g.model, "Model directory (default: $CIRCUITPROBE_MODEL_DIR)");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--workers", g.workers, "Worker threads (0: hardware concurrency)");
  app.add_option("--limit", g.limit, "Process at most this many items");

  CommandRegistry reg;
  register_data(app, g, reg);
  register_patch(app, g, reg);
  register_analyze(app, g, reg);
  register_embed(app, g, reg);
  register_surrogate(app, g, reg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  for (int i = 1; i < argc; ++i) g.command_line += (i > 1 ? " " : "") + std::string(argv[i]);
  if (const auto* cfg = app.get_config_ptr(); cfg && cfg->count()) {
    std::ifstream in(cfg->as<std::string>(), std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    g.config_text = text.str();
  }

  try {
    reg.run();
  } catch (const circuitprobe::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const circuitprobe::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
