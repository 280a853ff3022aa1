import exbubble;exbubble.test()
