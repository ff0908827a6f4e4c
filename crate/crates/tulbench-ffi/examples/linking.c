/* Build an index over encoded trajectories, link a query to a user, and
 * round-trip the index through a file.
 *
 *   cc -std=c99 -Wall examples/linking.c <libtulbench_ffi.a> \
 *      -Iinclude -lpthread -ldl -lm -o linking
 */
#include <assert.h>
#include <inttypes.h>
#include <stdio.h>

#include "tulbench.h"

int main(void) {
    /* Three users, two trajectories each, already reduced to the check-in
     * venue multiset. Encode each multiset as its d = 2 largest venues. */
    const uint64_t streams[6][4] = {
        {3, 17, 3, 9},  {17, 2, 9, 17},  /* user 100 */
        {54, 3, 60, 3}, {60, 2, 54, 60}, /* user 101 */
        {8, 30, 2, 8},  {30, 9, 30, 2},  /* user 102 */
    };
    const uint64_t labels[6] = {100, 100, 101, 101, 102, 102};

    uint64_t coords[6 * 2];
    for (int i = 0; i < 6; i++) {
        TulStatus status =
            tul_encode(streams[i], 4, 2, TUL_SAMPLER_MAX, &coords[i * 2]);
        assert(status == TUL_STATUS_OK);
    }

    TulIndex *index = NULL;
    TulStatus status = tul_index_build(2, coords, labels, 6, &index);
    if (status != TUL_STATUS_OK) {
        fprintf(stderr, "build failed: %s\n", tul_last_error_message());
        return 1;
    }

    /* A fresh trajectory from user 101: venues 60 and 54 dominate. */
    const uint64_t fresh[4] = {54, 60, 7, 54};
    uint64_t query[2];
    assert(tul_encode(fresh, 4, 2, TUL_SAMPLER_MAX, query) == TUL_STATUS_OK);

    uint64_t who = 0;
    assert(tul_index_predict(index, query, 3, &who) == TUL_STATUS_OK);
    printf("linked to user %" PRIu64 "\n", who);
    assert(who == 101);

    TulNeighbor nearest[3];
    uint64_t found = 0;
    assert(tul_index_query(index, query, 3, nearest, &found) == TUL_STATUS_OK);
    assert(found == 3);
    assert(nearest[0].label == 101 && nearest[0].dist2_hi == 0);
    printf("nearest neighbor at squared distance %" PRIu64 "\n",
           nearest[0].dist2_lo);

    assert(tul_index_save(index, "linking-index.bin") == TUL_STATUS_OK);
    TulIndex *reloaded = NULL;
    assert(tul_index_load("linking-index.bin", &reloaded) == TUL_STATUS_OK);
    uint64_t who_again = 0;
    assert(tul_index_predict(reloaded, query, 3, &who_again) == TUL_STATUS_OK);
    assert(who_again == who);
    remove("linking-index.bin");

    tul_index_free(reloaded);
    tul_index_free(index);
    printf("ok\n");
    return 0;
}
