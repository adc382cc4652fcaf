#include "hpcrun/cli/Cli.hpp"

#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "Common.hpp"
#include "hpcrun/gateway/ImageGateway.hpp"

namespace hpcrun::cli {

namespace {

void printHeader() {
    std::cout << std::left << std::setw(40) << "REPOSITORY" << std::setw(16) << "TAG" << std::setw(9) << "STATE"
              << std::setw(14) << "IMAGE ID" << "CREATED" << '\n';
}

void printEntry(const gateway::CatalogEntry& entry, bool quiet) {
    if (quiet) {
        std::cout << entry.imageId << '\n';
        return;
    }
    auto tag = entry.reference.tag.empty() ? entry.reference.digest.substr(0, 19) : entry.reference.tag;
    std::cout << std::left << std::setw(40) << entry.reference.registry + "/" + entry.reference.repository
              << std::setw(16) << tag << std::setw(9) << gateway::imageStateName(entry.state) << std::setw(14)
              << (entry.imageId.empty() ? "-" : entry.imageId.substr(0, 12)) << entry.createdAt;
    if (entry.state == gateway::ImageState::Failed && !entry.error.empty()) {
        std::cout << "  (" << entry.error << ")";
    }
    std::cout << '\n';
}

}

int imgMain(int argc, char** argv) {
    CLI::App app{"Pull, import and list container images in the site image store.", "img"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Print image ids only");

    std::string pullRef;
    auto* pull = app.add_subcommand("pull", "Pull an image from a registry");
    pull->add_option("reference", pullRef, "[docker:][registry/]repository[:tag][@digest]")->required();

    app.add_subcommand("list", "List images in the catalog");

    std::string lookupRef;
    auto* lookup = app.add_subcommand("lookup", "Show the catalog entry of one image");
    lookup->add_option("reference", lookupRef)->required();

    std::string importPath;
    std::string importRef;
    auto* import = app.add_subcommand("import", "Import a saved image archive");
    import->add_option("archive", importPath, "Archive in the multi-layer save format")->required();
    import->add_option("reference", importRef, "Name to register the image under")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int status = app.exit(e);
        return status == 0 ? 0 : 2;
    }

    try {
        gateway::ImageGateway gateway(loadSiteConfig());
        if (pull->parsed()) {
            auto entry = gateway.pull(gateway.parse(pullRef));
            if (!quiet) {
                printHeader();
            }
            printEntry(entry, quiet);
        } else if (app.got_subcommand("list")) {
            auto entries = gateway.list();
            if (!quiet) {
                printHeader();
            }
            for (const auto& entry : entries) {
                printEntry(entry, quiet);
            }
        } else if (lookup->parsed()) {
            auto entry = gateway.lookup(gateway.parse(lookupRef));
            if (!quiet) {
                printHeader();
            }
            printEntry(entry, quiet);
        } else if (import->parsed()) {
            auto entry = gateway.importTarball(importPath, gateway.parse(importRef));
            if (!quiet) {
                printHeader();
            }
            printEntry(entry, quiet);
        }
    } catch (const Error& e) {
        std::cerr << "img: " << describeCode(e.code()) << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "img: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}
