#pragma once

namespace hpcrun::cli {

/// `img pull|list|lookup|import`. 0 on success, 1 on gateway errors, 2 on usage errors.
int imgMain(int argc, char** argv);

/// `run --image=<ref> [--mpi] [--volume=src:dst[:ro]]... [--trace=path] [--] command...`
int runMain(int argc, char** argv);

}
