/* Busy workload with known hot functions.
 *
 *   spinner [seconds]            60% spin_hot, 25% spin_warm, 10% in a
 *                                mangled C++-style function, 5% deep recursion
 *   spinner --sibling [seconds]  only spin_sibling
 */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>

#define NOINLINE __attribute__((noinline, used))

static volatile unsigned long sink;

static double now(void)
{
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return ts.tv_sec + ts.tv_nsec * 1e-9;
}

/* Work is counted in fixed units, not wall time, so each function's share
 * of cpu time stays put when the machine is busy. */
#define UNIT 20000

#define SPIN_BODY(units)                                  \
    do {                                                  \
        unsigned long x = sink;                           \
        for (long i = 0; i < (long)(units) * UNIT; i++)   \
            x = x * 6364136223846793005UL + 1;            \
        sink = x;                                         \
    } while (0)

NOINLINE void spin_hot(int units) { SPIN_BODY(units); }
NOINLINE void spin_warm(int units) { SPIN_BODY(units); }
NOINLINE void spin_sibling(int units) { SPIN_BODY(units); }

/* gem5::Fetch::buildInst() */
NOINLINE void fetch_build_inst(int units) __asm__("_ZN4gem55Fetch9buildInstEv");
NOINLINE void fetch_build_inst(int units) { SPIN_BODY(units); }

NOINLINE void spin_deep_leaf(int units) { SPIN_BODY(units); }

NOINLINE int spin_deep(int depth, int units)
{
    if (depth <= 0) {
        spin_deep_leaf(units);
        return 0;
    }
    return spin_deep(depth - 1, units) + 1;
}

int main(int argc, char **argv)
{
    int sibling = 0;
    double secs = 10;
    for (int i = 1; i < argc; i++) {
        if (strcmp(argv[i], "--sibling") == 0)
            sibling = 1;
        else
            secs = atof(argv[i]);
    }
    double end = now() + secs;
    while (now() < end) {
        if (sibling) {
            spin_sibling(20);
            continue;
        }
        spin_hot(12);
        spin_warm(5);
        fetch_build_inst(2);
        spin_deep(38, 1);
    }
    printf("%lu\n", sink & 1);
    return 0;
}
