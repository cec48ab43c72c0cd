def b():
    # done
    return 2
